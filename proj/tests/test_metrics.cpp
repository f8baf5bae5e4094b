#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmasr/eval.hpp"
#include "mmasr/metrics.hpp"
#include "mmasr/synthdata.hpp"
#include "oracles.hpp"

using namespace mmasr;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> words) {
    return {words.begin(), words.end()};
}

DecodeResult fake_trace(std::initializer_list<double> visual_weights) {
    DecodeResult r;
    r.hierarchical = true;
    for (double w : visual_weights) {
        StepTrace s;
        s.visual_w = w;
        s.audio_w = 1.0 - w;
        r.steps.push_back(s);
        r.tokens.push_back(0);
    }
    return r;
}

}  // namespace

TEST_CASE("wer basics") {
    CHECK(wer(toks({"a", "b", "c"}), toks({"a", "b", "c"})) == 0.0);
    CHECK(wer(toks({"a", "b", "c"}), {}) == doctest::Approx(1.0));
    CHECK(wer(toks({"a", "b", "c"}), toks({"a", "x", "c", "d"})) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(wer({}, toks({"a"})), InputError);
}

TEST_CASE("alignment op counts satisfy the bookkeeping identities") {
    auto ref = toks({"a", "b", "c", "d"});
    auto hyp = toks({"a", "x", "d", "e"});
    auto al = align_tokens(ref, hyp);
    CHECK(al.matches + al.substitutions + al.deletions == ref.size());
    CHECK(al.matches + al.substitutions + al.insertions == hyp.size());
    CHECK(al.cost() == ucs_edit_distance(ref, hyp));
}

TEST_CASE("wer matches both oracles on random and exhaustive short inputs") {
    // full enumeration at small scale; the acceptance suite runs the big one
    auto seqs = all_sequences(3, 4);
    for (const auto& ref : seqs) {
        if (ref.empty()) continue;
        for (const auto& hyp : seqs) {
            const auto dp = align_tokens(ref, hyp).cost();
            CHECK(dp == ucs_edit_distance(ref, hyp));
            CHECK(dp == recursive_edit_distance(ref, hyp));
        }
    }
}

TEST_CASE("wer properties: zero iff equal, additive upper bound") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> ref, hyp;
        const std::size_t m = 1 + rng.uniform_index(6);
        const std::size_t n = rng.uniform_index(7);
        for (std::size_t i = 0; i < m; ++i)
            ref.push_back(std::string(1, static_cast<char>('a' + rng.uniform_index(4))));
        for (std::size_t j = 0; j < n; ++j)
            hyp.push_back(std::string(1, static_cast<char>('a' + rng.uniform_index(4))));
        const double w = wer(ref, hyp);
        if (ref == hyp) {
            CHECK(w == 0.0);
        } else {
            CHECK(w > 0.0);
        }
        CHECK(w <= static_cast<double>(ref.size() + hyp.size()) / ref.size());
    }
}

TEST_CASE("backtrace prefers match over delete for repeated words") {
    auto ref = toks({"x", "x"});
    auto hyp = toks({"x"});
    auto al = align_tokens(ref, hyp);
    // preferred alignment: delete ref[0], match ref[1]
    auto recs = mark_recovery(ref, hyp, {1}, al);
    CHECK(recs[0].recovered);
    auto recs0 = mark_recovery(ref, hyp, {0}, al);
    CHECK_FALSE(recs0[0].recovered);
}

TEST_CASE("mark_recovery exact-match rule") {
    auto ref = toks({"a", "dog", "runs"});

    // identical hypothesis: everything recovered
    auto al1 = align_tokens(ref, ref);
    auto recs1 = mark_recovery(ref, ref, {0, 1, 2}, al1);
    for (const auto& r : recs1) CHECK(r.recovered);

    // synonym substitution is not recovery
    auto hyp2 = toks({"a", "cat", "runs"});
    auto al2 = align_tokens(ref, hyp2);
    auto recs2 = mark_recovery(ref, hyp2, {1}, al2);
    CHECK_FALSE(recs2[0].recovered);
    CHECK(recs2[0].hyp_step == 1);  // aligned to the substituted step

    // different error elsewhere leaves the masked word recovered
    auto hyp3 = toks({"a", "dog", "walks"});
    auto al3 = align_tokens(ref, hyp3);
    auto recs3 = mark_recovery(ref, hyp3, {1}, al3);
    CHECK(recs3[0].recovered);

    CHECK_THROWS_AS(mark_recovery(ref, hyp3, {9}, al3), InputError);
}

TEST_CASE("mark_recovery pulls visual weights from the trace") {
    auto ref = toks({"a", "dog"});
    auto hyp = toks({"a", "dog"});
    auto al = align_tokens(ref, hyp);
    auto trace = fake_trace({0.2, 0.9});
    auto recs = mark_recovery(ref, hyp, {1}, al, &trace);
    CHECK(recs[0].visual_weight == doctest::Approx(0.9));

    DecodeResult short_trace = fake_trace({0.5});
    CHECK_THROWS_AS(mark_recovery(ref, hyp, {1}, al, &short_trace), ContractError);
}

TEST_CASE("recovery_rate arithmetic and undefined marker") {
    std::vector<RecoveryRecord> all(4);
    for (auto& r : all) r.recovered = true;
    CHECK(recovery_rate(all).percent() == doctest::Approx(100.0));

    all[0].recovered = all[1].recovered = false;
    auto half = recovery_rate(all);
    CHECK(half.num == 2);
    CHECK(half.den == 4);
    CHECK(half.percent() == doctest::Approx(50.0));

    auto empty = recovery_rate({});
    CHECK_FALSE(empty.defined());
    CHECK_THROWS_AS(empty.value(), ContractError);
}

TEST_CASE("grounding_rate uses a strict threshold over recovered words") {
    std::vector<RecoveryRecord> recs(3);
    recs[0].recovered = true;
    recs[0].visual_weight = 0.6;
    recs[1].recovered = true;
    recs[1].visual_weight = 0.4;
    recs[2].recovered = true;
    recs[2].visual_weight = 0.7;
    auto gr = grounding_rate(recs, 0.5);
    CHECK(gr.num == 2);
    CHECK(gr.den == 3);

    for (auto& r : recs) r.visual_weight = 1.0;
    CHECK(grounding_rate(recs, 0.5).percent() == doctest::Approx(100.0));

    // exactly at the threshold does not count
    recs[0].visual_weight = 0.5;
    CHECK(grounding_rate(recs, 0.5).num == 2);

    // unrecovered words are excluded entirely
    recs[1].recovered = false;
    CHECK(grounding_rate(recs, 0.5).den == 2);

    CHECK_FALSE(grounding_rate({}, 0.5).defined());
}

TEST_CASE("grounding_rate equals a brute-force count on random records") {
    Rng rng(7);
    std::vector<RecoveryRecord> recs(200);
    for (auto& r : recs) {
        r.recovered = rng.bernoulli(0.7);
        r.visual_weight = rng.bernoulli(0.9) ? rng.uniform01() : -1.0;
    }
    auto gr = grounding_rate(recs, 0.5);
    std::size_t num = 0, den = 0;
    for (const auto& r : recs) {
        if (r.recovered && r.visual_weight >= 0) {
            ++den;
            if (r.visual_weight > 0.5) ++num;
        }
    }
    CHECK(gr.num == num);
    CHECK(gr.den == den);
}

TEST_CASE("attention_profile fixture") {
    auto trace = fake_trace({0.1, 0.2, 0.9, 0.3, 0.4});
    std::vector<const DecodeResult*> traces{&trace};

    // single onset, window 0
    auto p0 = attention_profile(traces, {{2}}, 0);
    REQUIRE(p0.size() == 1);
    CHECK(p0[0].offset == 0);
    CHECK(p0[0].mean_visual_weight == doctest::Approx(0.9));

    // window 2 around step 2: means are the raw weights
    auto p2 = attention_profile(traces, {{2}}, 2);
    REQUIRE(p2.size() == 5);
    CHECK(p2[0].mean_visual_weight == doctest::Approx(0.1));
    CHECK(p2[4].mean_visual_weight == doctest::Approx(0.4));

    // onset at the sequence edge: out-of-range offsets report zero counts
    auto edge = attention_profile(traces, {{0}}, 2);
    CHECK(edge[0].count == 0);
    CHECK(edge[1].count == 0);
    CHECK(edge[2].count == 1);

    // two onsets average
    auto both = attention_profile(traces, {{1, 3}}, 0);
    CHECK(both[0].mean_visual_weight == doctest::Approx(0.25));
    CHECK(both[0].count == 2);

    // constant trace -> flat profile
    auto flat_trace = fake_trace({0.6, 0.6, 0.6, 0.6});
    std::vector<const DecodeResult*> flat{&flat_trace};
    for (const auto& p : attention_profile(flat, {{1, 2}}, 1)) {
        CHECK(p.mean_visual_weight == doctest::Approx(0.6));
    }

    DecodeResult non_hier;
    non_hier.hierarchical = false;
    std::vector<const DecodeResult*> bad{&non_hier};
    CHECK_THROWS_AS(attention_profile(bad, {{0}}, 1), ContractError);
}

TEST_CASE("profile csv round trip") {
    auto trace = fake_trace({0.1, 0.2, 0.9});
    std::vector<const DecodeResult*> traces{&trace};
    auto profile = attention_profile(traces, {{1}}, 1);
    auto path = (std::filesystem::temp_directory_path() / "mmasr_profile.csv").string();
    write_profile_csv(profile, path);
    auto back = read_profile_csv(path);
    REQUIRE(back.size() == profile.size());
    for (std::size_t i = 0; i < profile.size(); ++i) {
        CHECK(back[i].offset == profile[i].offset);
        CHECK(back[i].mean_visual_weight == doctest::Approx(profile[i].mean_visual_weight));
        CHECK(back[i].count == profile[i].count);
    }
    std::filesystem::remove(path);
}

TEST_CASE("congruency on a unimodal model yields identical reports") {
    auto vocab = gen_vocab(VocabSizes{}, 12, 16, 6, 4.0, 3);
    SynthParams params;
    auto corpus = gen_corpus(vocab, 6, params, 5);

    ModelConfig cfg;
    cfg.feat_dim = vocab.feat_dim;
    cfg.enc_hidden = 4;
    cfg.enc_layers = 2;
    cfg.subsample_layers = {0, 1};
    cfg.emb_dim = 6;
    cfg.dec_hidden = 8;
    cfg.attn_dim = 6;
    cfg.visual_dim = vocab.visual_dim;
    cfg.visual_proj_dim = 8;
    std::vector<std::vector<std::string>> seqs;
    for (const auto& u : corpus.utterances) seqs.push_back(u.tokens);
    auto model = FusionModel::init(FusionKind::Unimodal, cfg, Vocab::build(seqs), 17);

    auto outcome = congruency_eval(model, corpus, nullptr, 11);
    CHECK(outcome.congruent.wer == outcome.incongruent.wer);
    CHECK(outcome.congruent.wer_errors == outcome.incongruent.wer_errors);
    for (std::size_t i = 0; i < outcome.permutation.size(); ++i) {
        CHECK(outcome.permutation[i] != i);
    }

    Corpus single;
    single.meta = corpus.meta;
    single.utterances.push_back(corpus.utterances[0]);
    CHECK_THROWS_AS(congruency_eval(model, single, nullptr, 11), InputError);
}

TEST_CASE("eval report round trips through json") {
    EvalReport r;
    r.fusion = "hierattn-df";
    r.n_utterances = 3;
    r.wer_errors = 4;
    r.wer_ref_tokens = 10;
    r.wer = 0.4;
    r.recovery = {3, 5};
    r.recovery_by_level[20] = {1, 2};
    r.recovery_by_level[60] = {2, 3};
    r.recovery_by_category["NOUN"] = {2, 2};
    r.grounding = {2, 3};
    r.grounding_by_category["NOUN"] = {1, 2};
    r.tool_version = kToolVersion;
    r.data_hash = 12345;
    r.resolved_config = "{\"seed\":7}";

    auto path = (std::filesystem::temp_directory_path() / "mmasr_report.json").string();
    save_report(r, path);
    auto back = load_report(path);
    CHECK(back.fusion == r.fusion);
    CHECK(back.recovery.num == 3);
    CHECK(back.recovery_by_level.at(60).den == 3);
    CHECK(back.recovery_by_category.at("NOUN").num == 2);
    CHECK(back.grounding.den == 3);
    CHECK(back.data_hash == 12345);
    CHECK(!format_report_table(back).empty());
    std::filesystem::remove(path);
}
