#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mmasr/model.hpp"

using namespace mmasr;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.feat_dim = 5;
    c.enc_hidden = 3;
    c.enc_layers = 2;
    c.subsample_layers = {0};
    c.emb_dim = 4;
    c.dec_hidden = 6;
    c.attn_dim = 4;
    c.visual_dim = 7;
    c.visual_proj_dim = 5;
    c.hier_attn_dim = 4;
    return c;
}

Vocab tiny_vocab() {
    return Vocab::build({{"cat", "dog", "runs", "sits", "fast", "red", "blue", "a"}});
}

FeatMatrix random_frames(Rng& rng, std::size_t t, std::size_t d) {
    FeatMatrix m;
    m.rows = t;
    m.cols = d;
    m.data.resize(t * d);
    for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

std::vector<real_t> random_visual(Rng& rng, std::size_t d) {
    std::vector<real_t> v(d);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("vocab reserves special tokens and sorts words") {
    auto v = Vocab::build({{"dog", "a"}, {"cat", "dog"}});
    CHECK(v.word(Vocab::kPad) == "<pad>");
    CHECK(v.word(Vocab::kBos) == "<bos>");
    CHECK(v.word(Vocab::kEos) == "<eos>");
    CHECK(v.word(Vocab::kUnk) == "<unk>");
    CHECK(v.size() == 7);
    CHECK(v.id("a") == 4);
    CHECK(v.id("cat") == 5);
    CHECK(v.id("dog") == 6);
    CHECK(v.id("zebra") == Vocab::kUnk);
}

TEST_CASE("parameters land on the float32 grid at init") {
    auto m = FusionModel::init(FusionKind::HierAttnDF, tiny_config(), tiny_vocab(), 42);
    for (const auto& p : m.parameters()) {
        for (real_t v : p->data) {
            CHECK(v == static_cast<real_t>(static_cast<float>(v)));
        }
    }
}

TEST_CASE("shift adaptation with zero projection matches unimodal encoding") {
    Rng rng(1);
    auto cfg = tiny_config();
    auto uni = FusionModel::init(FusionKind::Unimodal, cfg, tiny_vocab(), 7);
    auto sa = FusionModel::init(FusionKind::ShiftAdapt, cfg, tiny_vocab(), 7);
    auto frames = to_tensor(random_frames(rng, 8, cfg.feat_dim));
    auto visual = to_tensor(random_visual(rng, cfg.visual_dim));

    std::fill(sa.shift_w->data.begin(), sa.shift_w->data.end(), 0.0);
    std::fill(sa.shift_b->data.begin(), sa.shift_b->data.end(), 0.0);

    Tape tape(false);
    auto e_uni = encode(tape, uni, frames, nullptr);
    auto e_shift = encode(tape, sa, frames, visual);
    CHECK(e_uni->data == e_shift->data);
}

TEST_CASE("shift adaptation adds the same shift vector at every timestep") {
    Rng rng(2);
    auto cfg = tiny_config();
    auto model = FusionModel::init(FusionKind::ShiftAdapt, cfg, tiny_vocab(), 9);
    auto uni = FusionModel::init(FusionKind::Unimodal, cfg, tiny_vocab(), 9);
    auto frames = random_frames(rng, 8, cfg.feat_dim);
    auto visual = random_visual(rng, cfg.visual_dim);

    // shift computed directly
    std::vector<real_t> s(cfg.feat_dim, 0.0);
    for (std::size_t i = 0; i < cfg.feat_dim; ++i) {
        for (std::size_t j = 0; j < cfg.visual_dim; ++j)
            s[i] += model.shift_w->at(i, j) * visual[j];
        s[i] += model.shift_b->data[i];
    }
    auto shifted = frames;
    for (std::size_t t = 0; t < frames.rows; ++t)
        for (std::size_t i = 0; i < cfg.feat_dim; ++i) shifted.at(t, i) += s[i];

    Tape tape(false);
    auto e1 = encode(tape, model, to_tensor(frames), to_tensor(visual));
    auto e2 = encode(tape, uni, to_tensor(shifted), nullptr);
    for (std::size_t i = 0; i < e1->numel(); ++i)
        CHECK(e1->data[i] == doctest::Approx(e2->data[i]).epsilon(1e-12));

    CHECK_THROWS_AS(encode(tape, model, to_tensor(frames), nullptr), ContractError);
}

TEST_CASE("shift projection receives gradient") {
    Rng rng(3);
    auto cfg = tiny_config();
    auto model = FusionModel::init(FusionKind::ShiftAdapt, cfg, tiny_vocab(), 11);
    auto frames = to_tensor(random_frames(rng, 8, cfg.feat_dim));
    auto visual = to_tensor(random_visual(rng, cfg.visual_dim));
    std::vector<std::size_t> target{Vocab::kBos, model.vocab.id("cat"), Vocab::kEos};

    Tape tape;
    auto loss = forward_loss(tape, model, frames, frames->rows(), visual, target);
    tape.backward(loss);
    double norm = 0;
    for (real_t g : model.shift_w->grad) norm += std::fabs(g);
    CHECK(norm > 1e-8);
}

TEST_CASE("hierarchical weights are 0.5 when the projected visual equals the audio context") {
    Rng rng(4);
    auto cfg = tiny_config();
    const std::size_t e = cfg.enc_state_dim();
    cfg.visual_dim = e;
    cfg.visual_proj_dim = e;
    auto model = FusionModel::init(FusionKind::HierAttnDF, cfg, tiny_vocab(), 13);

    // identity projections so the visual item is exactly the supplied vector
    std::fill(model.visual_proj->data.begin(), model.visual_proj->data.end(), 0.0);
    std::fill(model.hier_proj->data.begin(), model.hier_proj->data.end(), 0.0);
    for (std::size_t i = 0; i < e; ++i) {
        model.visual_proj->at(i, i) = 1.0;
        model.hier_proj->at(i, i) = 1.0;
    }

    auto frames = to_tensor(random_frames(rng, 8, cfg.feat_dim));
    Tape tape(false);
    auto probe_visual = to_tensor(random_visual(rng, e));
    auto enc = encode(tape, model, frames, probe_visual);
    auto state = initial_state(model);
    auto first = decode_step(tape, model, enc, probe_visual, Vocab::kBos, state);

    // feed the observed audio context back in as the visual vector
    auto mirrored = Tensor::from({e}, first.audio_context->data);
    auto again = decode_step(tape, model, enc, mirrored, Vocab::kBos, state);
    CHECK(again.hier_weights->data[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(again.hier_weights->data[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("weighted fusion gate is 0.5 when the embedding is orthogonal to the visual") {
    Rng rng(5);
    auto cfg = tiny_config();
    auto model = FusionModel::init(FusionKind::WeightedDF, cfg, tiny_vocab(), 17);
    // zero embedding row for <bos>: dot product with any projected visual is 0
    for (std::size_t j = 0; j < cfg.emb_dim; ++j) model.embedding->at(Vocab::kBos, j) = 0.0;

    auto frames = to_tensor(random_frames(rng, 8, cfg.feat_dim));
    auto visual = to_tensor(random_visual(rng, cfg.visual_dim));
    Tape tape(false);
    auto enc = encode(tape, model, frames, visual);
    auto step = decode_step(tape, model, enc, visual, Vocab::kBos, initial_state(model));
    CHECK(step.weighted_lambda->data[0] == doctest::Approx(0.5));
}

TEST_CASE("decode_step rejects out-of-range token ids") {
    Rng rng(6);
    auto model = FusionModel::init(FusionKind::Unimodal, tiny_config(), tiny_vocab(), 19);
    auto frames = to_tensor(random_frames(rng, 8, model.config.feat_dim));
    Tape tape(false);
    auto enc = encode(tape, model, frames, nullptr);
    CHECK_THROWS_AS(decode_step(tape, model, enc, nullptr, 9999, initial_state(model)),
                    InputError);
}

TEST_CASE("forward_loss equals log V for a zeroed output layer") {
    Rng rng(7);
    auto model = FusionModel::init(FusionKind::Unimodal, tiny_config(), tiny_vocab(), 23);
    std::fill(model.out_proj->data.begin(), model.out_proj->data.end(), 0.0);
    auto frames = to_tensor(random_frames(rng, 8, model.config.feat_dim));
    std::vector<std::size_t> target{Vocab::kBos, model.vocab.id("dog"), model.vocab.id("runs"),
                                    Vocab::kEos};
    Tape tape;
    auto loss = forward_loss(tape, model, frames, frames->rows(), nullptr, target);
    CHECK(loss->data[0] == doctest::Approx(std::log(static_cast<double>(model.vocab.size()))));
}

TEST_CASE("forward_loss on an eos-only target is the eos negative log-probability") {
    Rng rng(8);
    auto model = FusionModel::init(FusionKind::Unimodal, tiny_config(), tiny_vocab(), 29);
    auto frames_m = random_frames(rng, 8, model.config.feat_dim);
    auto frames = to_tensor(frames_m);
    Tape tape;
    auto loss = forward_loss(tape, model, frames, frames->rows(), nullptr,
                             {Vocab::kBos, Vocab::kEos});

    Tape probe(false);
    auto enc = encode(probe, model, frames, nullptr);
    auto step = decode_step(probe, model, enc, nullptr, Vocab::kBos, initial_state(model));
    real_t mx = step.logits->data[0];
    for (real_t v : step.logits->data) mx = std::max(mx, v);
    double denom = 0;
    for (real_t v : step.logits->data) denom += std::exp(static_cast<double>(v - mx));
    const double expected = -(step.logits->data[Vocab::kEos] - mx - std::log(denom));
    CHECK(loss->data[0] == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(forward_loss(tape, model, frames, frames->rows(), nullptr, {Vocab::kBos}),
                    InputError);
    CHECK_THROWS_AS(forward_loss(tape, model, frames, frames->rows(), nullptr, {}), InputError);
}

TEST_CASE("padding is excluded: padded and unpadded losses agree") {
    Rng rng(9);
    auto model = FusionModel::init(FusionKind::HierAttnDF, tiny_config(), tiny_vocab(), 31);
    auto frames = random_frames(rng, 10, model.config.feat_dim);
    auto visual = random_visual(rng, model.config.visual_dim);
    std::vector<std::size_t> target{Vocab::kBos, model.vocab.id("red"), Vocab::kEos};

    Tape t1;
    auto plain = forward_loss(t1, model, to_tensor(frames), frames.rows, to_tensor(visual),
                              target);

    // pad the frame block and the target; n_valid masks the frame padding
    auto padded = frames;
    padded.rows += 4;
    padded.data.resize(padded.rows * padded.cols, 0.0);
    auto padded_target = target;
    padded_target.push_back(Vocab::kPad);
    padded_target.push_back(Vocab::kPad);
    Tape t2;
    auto masked = forward_loss(t2, model, to_tensor(padded), frames.rows, to_tensor(visual),
                               padded_target);
    CHECK(std::fabs(plain->data[0] - masked->data[0]) < 1e-9);
}

TEST_CASE("full-model gradients pass grad_check for EarlyDF and MiddleDF") {
    Rng rng(10);
    for (auto kind : {FusionKind::EarlyDF, FusionKind::MiddleDF}) {
        auto model = FusionModel::init(kind, tiny_config(), tiny_vocab(), 37);
        auto frames = to_tensor(random_frames(rng, 6, model.config.feat_dim));
        auto visual = to_tensor(random_visual(rng, model.config.visual_dim));
        std::vector<std::size_t> target{Vocab::kBos, model.vocab.id("cat"), model.vocab.id("fast"),
                                        Vocab::kEos};
        auto params = model.parameters();
        auto report = grad_check(
            [&](Tape& t) {
                return forward_loss(t, model, frames, frames->rows(), visual, target);
            },
            params);
        CHECK(report.pass);
    }
}

TEST_CASE("unimodal decoding ignores the visual vector") {
    Rng rng(11);
    auto model = FusionModel::init(FusionKind::Unimodal, tiny_config(), tiny_vocab(), 41);
    auto frames = random_frames(rng, 9, model.config.feat_dim);
    auto v1 = random_visual(rng, model.config.visual_dim);
    auto v2 = random_visual(rng, model.config.visual_dim);
    auto r1 = greedy_decode(model, frames, v1, 10);
    auto r2 = greedy_decode(model, frames, v2, 10);
    CHECK(r1.tokens == r2.tokens);
    REQUIRE(r1.steps.size() == r2.steps.size());
    for (std::size_t i = 0; i < r1.steps.size(); ++i) {
        CHECK(r1.steps[i].log_prob == r2.steps[i].log_prob);
        CHECK(r1.steps[i].audio_weights == r2.steps[i].audio_weights);
    }
}

TEST_CASE("greedy_decode respects max_len and traces every emitted token") {
    Rng rng(12);
    auto model = FusionModel::init(FusionKind::HierAttnDF, tiny_config(), tiny_vocab(), 43);
    auto frames = random_frames(rng, 9, model.config.feat_dim);
    auto visual = random_visual(rng, model.config.visual_dim);

    auto one = greedy_decode(model, frames, visual, 1);
    CHECK(one.tokens.size() <= 1);

    auto full = greedy_decode(model, frames, visual, 12);
    CHECK(full.steps.size() == full.tokens.size());
    CHECK(full.hierarchical);
    for (const auto& s : full.steps) {
        CHECK(s.audio_w >= 0.0);
        CHECK(s.visual_w >= 0.0);
        CHECK(s.audio_w + s.visual_w == doctest::Approx(1.0).epsilon(1e-6));
    }

    // decoding is deterministic
    auto again = greedy_decode(model, frames, visual, 12);
    CHECK(again.tokens == full.tokens);
    CHECK_THROWS_AS(greedy_decode(model, frames, visual, 0), InputError);
}

TEST_CASE("checkpoint round-trip is exact and idempotent") {
    Rng rng(13);
    auto dir = std::filesystem::temp_directory_path() / "mmasr_ckpt_test";
    std::filesystem::create_directories(dir);
    auto path1 = (dir / "model_a.ckpt").string();
    auto path2 = (dir / "model_b.ckpt").string();

    auto model = FusionModel::init(FusionKind::WeightedDF, tiny_config(), tiny_vocab(), 47);
    auto frames = to_tensor(random_frames(rng, 8, model.config.feat_dim));
    auto visual = to_tensor(random_visual(rng, model.config.visual_dim));
    std::vector<std::size_t> target{Vocab::kBos, model.vocab.id("blue"), Vocab::kEos};

    Tape t1(false);
    auto loss_before = forward_loss(t1, model, frames, frames->rows(), visual, target);

    save_checkpoint(model, path1);
    auto loaded = load_checkpoint(path1);
    CHECK(loaded.kind == FusionKind::WeightedDF);
    CHECK(loaded.vocab.words() == model.vocab.words());
    save_checkpoint(loaded, path2);

    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    Tape t2(false);
    auto loss_after = forward_loss(t2, loaded, frames, frames->rows(), visual, target);
    CHECK(loss_before->data[0] == loss_after->data[0]);

    auto d1 = greedy_decode(model, random_frames(rng, 8, model.config.feat_dim),
                            random_visual(rng, model.config.visual_dim), 8);
    (void)d1;

    // truncated file -> format error
    auto trunc = (dir / "trunc.ckpt").string();
    {
        std::ofstream out(trunc, std::ios::binary);
        out << b1.substr(0, b1.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(trunc), FormatError);

    // kind mismatch names both kinds
    CHECK_THROWS_WITH_AS(load_checkpoint(path1, FusionKind::Unimodal),
                         doctest::Contains("unimodal"), FormatError);
    std::filesystem::remove_all(dir);
}
