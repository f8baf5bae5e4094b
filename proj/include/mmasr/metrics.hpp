#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmasr/common.hpp"
#include "mmasr/model.hpp"

namespace mmasr {

enum class EditOpKind { Match, Substitute, Delete, Insert };

struct EditOp {
    EditOpKind kind;
    // ref_index valid for Match/Substitute/Delete; hyp_index for
    // Match/Substitute/Insert.
    std::size_t ref_index = 0;
    std::size_t hyp_index = 0;
};

struct EditAlignment {
    std::vector<EditOp> ops;
    std::size_t matches = 0;
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;

    std::size_t cost() const { return substitutions + deletions + insertions; }
};

// Minimal-cost alignment, unit costs. Equal-cost ties break by preferring
// match > substitute > delete > insert during the backtrace.
EditAlignment align_tokens(const std::vector<std::string>& ref,
                           const std::vector<std::string>& hyp);

// (S + D + I) / |ref|
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Ratio with its backing counts; den == 0 means undefined, not zero.
struct Rate {
    std::size_t num = 0;
    std::size_t den = 0;

    bool defined() const { return den > 0; }
    double value() const;
    double percent() const { return 100.0 * value(); }
};

struct RecoveryRecord {
    std::string utterance_id;
    std::size_t masked_index = 0;
    bool recovered = false;
    double visual_weight = -1.0;  // hierarchical visual weight; < 0 when absent
    std::optional<std::size_t> hyp_step;  // aligned hypothesis step (match or substitute)
    std::string ref_word;
    std::string category;  // empty when untagged
};

// A masked reference word counts as recovered only when the alignment holds an
// exact match at its index. The attention trace, when given, supplies the
// hierarchical visual weight at the aligned hypothesis step.
std::vector<RecoveryRecord> mark_recovery(const std::vector<std::string>& ref,
                                          const std::vector<std::string>& hyp,
                                          const std::set<std::size_t>& masked_indices,
                                          const EditAlignment& alignment,
                                          const DecodeResult* attn = nullptr);

Rate recovery_rate(const std::vector<RecoveryRecord>& records);

// Among recovered masked words with attention weights: fraction decoded while
// the visual weight exceeded the threshold (strictly).
Rate grounding_rate(const std::vector<RecoveryRecord>& records, double threshold = 0.5);

struct AttentionProfilePoint {
    int offset = 0;
    double mean_visual_weight = 0.0;
    std::size_t count = 0;
};

// Mean visual weight at offsets -window..+window around each masked-word
// hypothesis step; out-of-range offsets are excluded from the averages.
std::vector<AttentionProfilePoint> attention_profile(
    const std::vector<const DecodeResult*>& traces,
    const std::vector<std::vector<std::size_t>>& onset_steps, int window = 2);

void write_profile_csv(const std::vector<AttentionProfilePoint>& profile,
                       const std::string& path);
std::vector<AttentionProfilePoint> read_profile_csv(const std::string& path);

}  // namespace mmasr
