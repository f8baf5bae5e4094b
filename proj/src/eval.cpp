#include "mmasr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mmasr {

using nlohmann::json;

namespace {

void add_rate(Rate& into, const Rate& r) {
    into.num += r.num;
    into.den += r.den;
}

}  // namespace

EvalOutcome evaluate_corpus(const FusionModel& model, const Corpus& corpus,
                            const std::vector<MaskPlan>* plans, const EvalOptions& opts) {
    if (plans && plans->size() != corpus.utterances.size()) {
        throw ContractError("plan count does not match utterance count");
    }
    EvalOutcome out;
    out.report.fusion = to_string(model.kind);
    out.report.tool_version = kToolVersion;
    out.report.n_utterances = corpus.utterances.size();

    for (std::size_t ui = 0; ui < corpus.utterances.size(); ++ui) {
        const auto& u = corpus.utterances[ui];
        UtteranceEval ue;
        ue.id = u.id;
        ue.ref = u.tokens;

        const std::size_t cap = std::max(opts.min_decode_len, 2 * u.tokens.size() + 4);
        ue.trace = greedy_decode(model, u.frames, u.visual, cap);
        for (std::size_t tok : ue.trace.tokens) ue.hyp.push_back(model.vocab.word(tok));
        ue.alignment = align_tokens(ue.ref, ue.hyp);

        out.report.wer_errors += ue.alignment.cost();
        out.report.wer_ref_tokens += ue.ref.size();

        if (plans) {
            const auto& plan = (*plans)[ui];
            ue.records = mark_recovery(ue.ref, ue.hyp, plan.word_indices, ue.alignment,
                                       ue.trace.hierarchical ? &ue.trace : nullptr);
            for (auto& rec : ue.records) {
                rec.utterance_id = u.id;
                if (rec.masked_index < u.categories.size()) {
                    rec.category = u.categories[rec.masked_index];
                }
            }
            const auto rr = recovery_rate(ue.records);
            add_rate(out.report.recovery, rr);
            const int level = static_cast<int>(std::llround(plan.probability * 100.0));
            add_rate(out.report.recovery_by_level[level], rr);
            add_rate(out.report.grounding,
                     grounding_rate(ue.records, opts.grounding_threshold));
            for (const auto& rec : ue.records) {
                if (rec.category.empty()) continue;
                auto& cat_rr = out.report.recovery_by_category[rec.category];
                ++cat_rr.den;
                cat_rr.num += rec.recovered ? 1 : 0;
                if (rec.recovered && rec.visual_weight >= 0) {
                    auto& cat_gr = out.report.grounding_by_category[rec.category];
                    ++cat_gr.den;
                    cat_gr.num += rec.visual_weight > opts.grounding_threshold ? 1 : 0;
                }
            }
        }
        out.utterances.push_back(std::move(ue));
    }
    out.report.wer = out.report.wer_ref_tokens == 0
                         ? 0.0
                         : static_cast<double>(out.report.wer_errors) /
                               static_cast<double>(out.report.wer_ref_tokens);
    return out;
}

CongruencyOutcome congruency_eval(const FusionModel& model, const Corpus& corpus,
                                  const std::vector<MaskPlan>* plans, std::uint64_t seed,
                                  const EvalOptions& opts) {
    const std::size_t n = corpus.utterances.size();
    if (n < 2) {
        throw InputError("congruency evaluation needs at least 2 utterances (no derangement of " +
                         std::to_string(n) + ")");
    }
    CongruencyOutcome out;
    out.permutation.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.permutation[i] = i;
    // single-cycle shuffle: every index moves
    Rng rng(seed);
    for (std::size_t i = n - 1; i >= 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(out.permutation[i], out.permutation[j]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (out.permutation[i] == i) throw ContractError("derangement produced a fixed point");
    }

    out.congruent = evaluate_corpus(model, corpus, plans, opts).report;

    Corpus swapped = corpus;
    for (std::size_t i = 0; i < n; ++i) {
        swapped.utterances[i].visual = corpus.utterances[out.permutation[i]].visual;
    }
    out.incongruent = evaluate_corpus(model, swapped, plans, opts).report;
    return out;
}

std::vector<std::vector<std::size_t>> onset_steps(const std::vector<UtteranceEval>& utterances) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& ue : utterances) {
        std::vector<std::size_t> steps;
        for (const auto& rec : ue.records) {
            if (rec.hyp_step) steps.push_back(*rec.hyp_step);
        }
        out.push_back(std::move(steps));
    }
    return out;
}

// ---- report serialization --------------------------------------------------------

namespace {

json rate_json(const Rate& r) {
    json j;
    j["num"] = r.num;
    j["den"] = r.den;
    if (r.defined()) {
        j["percent"] = r.percent();
    } else {
        j["percent"] = nullptr;
    }
    return j;
}

Rate rate_from_json(const json& j) {
    return Rate{j.at("num").get<std::size_t>(), j.at("den").get<std::size_t>()};
}

}  // namespace

void save_report(const EvalReport& report, const std::string& path) {
    json j;
    j["format"] = "mmasr-eval-report";
    j["version"] = 1;
    j["fusion"] = report.fusion;
    j["n_utterances"] = report.n_utterances;
    j["wer"] = {{"errors", report.wer_errors},
                {"ref_tokens", report.wer_ref_tokens},
                {"value", report.wer}};
    j["recovery"] = rate_json(report.recovery);
    json by_level = json::object();
    for (const auto& [level, rate] : report.recovery_by_level) {
        by_level[std::to_string(level)] = rate_json(rate);
    }
    j["recovery_by_level"] = std::move(by_level);
    json by_cat = json::object();
    for (const auto& [cat, rate] : report.recovery_by_category) by_cat[cat] = rate_json(rate);
    j["recovery_by_category"] = std::move(by_cat);
    j["grounding"] = rate_json(report.grounding);
    json gr_cat = json::object();
    for (const auto& [cat, rate] : report.grounding_by_category) gr_cat[cat] = rate_json(rate);
    j["grounding_by_category"] = std::move(gr_cat);
    j["tool_version"] = report.tool_version;
    j["data_hash"] = report.data_hash;
    if (!report.resolved_config.empty()) {
        j["resolved_config"] = json::parse(report.resolved_config);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

EvalReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing report: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("report parse error in " + path + ": " + e.what());
    }
    if (j.value("format", "") != "mmasr-eval-report") {
        throw FormatError("not an eval report: " + path);
    }
    EvalReport r;
    r.fusion = j.at("fusion").get<std::string>();
    r.n_utterances = j.at("n_utterances").get<std::size_t>();
    r.wer_errors = j.at("wer").at("errors").get<std::size_t>();
    r.wer_ref_tokens = j.at("wer").at("ref_tokens").get<std::size_t>();
    r.wer = j.at("wer").at("value").get<double>();
    r.recovery = rate_from_json(j.at("recovery"));
    for (const auto& [key, val] : j.at("recovery_by_level").items()) {
        r.recovery_by_level[std::stoi(key)] = rate_from_json(val);
    }
    for (const auto& [key, val] : j.at("recovery_by_category").items()) {
        r.recovery_by_category[key] = rate_from_json(val);
    }
    r.grounding = rate_from_json(j.at("grounding"));
    for (const auto& [key, val] : j.at("grounding_by_category").items()) {
        r.grounding_by_category[key] = rate_from_json(val);
    }
    r.tool_version = j.at("tool_version").get<std::string>();
    r.data_hash = j.at("data_hash").get<std::uint64_t>();
    if (j.contains("resolved_config")) r.resolved_config = j.at("resolved_config").dump();
    return r;
}

std::string format_report_table(const EvalReport& report) {
    std::ostringstream os;
    auto pct = [](const Rate& r) {
        if (!r.defined()) return std::string("   n/a");
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%6.1f", r.percent());
        return std::string(buf);
    };
    os << "model: " << report.fusion << "  (" << report.n_utterances << " utterances)\n";
    char wbuf[16];
    std::snprintf(wbuf, sizeof(wbuf), "%.1f", 100.0 * report.wer);
    os << "WER (%): " << wbuf << "   RR (%): " << pct(report.recovery)
       << "   GR (%): " << pct(report.grounding) << "\n";
    if (!report.recovery_by_level.empty()) {
        os << "masking%   ";
        for (const auto& [level, _] : report.recovery_by_level) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%6d", level);
            os << buf;
        }
        os << "\nRR (%)     ";
        for (const auto& [_, rate] : report.recovery_by_level) os << pct(rate);
        os << "\n";
    }
    if (!report.recovery_by_category.empty()) {
        os << "category RR (%):";
        for (const auto& [cat, rate] : report.recovery_by_category) {
            os << "  " << cat << "=" << pct(rate);
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace mmasr
