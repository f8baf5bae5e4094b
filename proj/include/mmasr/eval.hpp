#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmasr/masking.hpp"
#include "mmasr/metrics.hpp"
#include "mmasr/model.hpp"

namespace mmasr {

struct EvalOptions {
    double grounding_threshold = 0.5;
    std::size_t min_decode_len = 8;  // per-utterance cap is max(this, 2*|ref|+4)
};

struct UtteranceEval {
    std::string id;
    std::vector<std::string> ref;
    std::vector<std::string> hyp;
    EditAlignment alignment;
    DecodeResult trace;
    std::vector<RecoveryRecord> records;
};

struct EvalReport {
    std::string fusion;
    std::size_t n_utterances = 0;
    std::size_t wer_errors = 0;
    std::size_t wer_ref_tokens = 0;
    double wer = 0.0;
    Rate recovery;
    std::map<int, Rate> recovery_by_level;  // key: masking percent
    std::map<std::string, Rate> recovery_by_category;
    Rate grounding;
    std::map<std::string, Rate> grounding_by_category;
    // provenance
    std::string tool_version;
    std::uint64_t data_hash = 0;
    std::string resolved_config;  // JSON text of the settings that produced this report
};

struct EvalOutcome {
    EvalReport report;
    std::vector<UtteranceEval> utterances;
};

// Greedy-decodes every utterance and aggregates WER, Recovery Rate (when mask
// plans are supplied), Grounding Rate (hierarchical models), and per-level /
// per-category breakdowns.
EvalOutcome evaluate_corpus(const FusionModel& model, const Corpus& corpus,
                            const std::vector<MaskPlan>* plans, const EvalOptions& opts = {});

// Seeded derangement of the corpus image pairing (single-cycle shuffle, so no
// utterance keeps its own visual vector), then evaluates both pairings with
// identical settings.
struct CongruencyOutcome {
    EvalReport congruent;
    EvalReport incongruent;
    std::vector<std::size_t> permutation;
};
CongruencyOutcome congruency_eval(const FusionModel& model, const Corpus& corpus,
                                  const std::vector<MaskPlan>* plans, std::uint64_t seed,
                                  const EvalOptions& opts = {});

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);
std::string format_report_table(const EvalReport& report);

// Masked-word onsets (aligned hypothesis steps) per utterance, for profiles.
std::vector<std::vector<std::size_t>> onset_steps(const std::vector<UtteranceEval>& utterances);

}  // namespace mmasr
