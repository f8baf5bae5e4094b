#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mmasr/corpus.hpp"

namespace mmasr {

enum class FillKind { Silence, Whitenoise };

std::string to_string(FillKind kind);
FillKind fill_from_string(const std::string& name);

struct FillSpec {
    FillKind kind = FillKind::Silence;
    std::vector<real_t> silence_prototype;  // one frame, feature_dim wide
    double noise_mean = 0.0;
    double noise_std = 1.0;
    double fill_seconds = 0.5;  // replacement block length
};

// Half-open frame interval [begin, end) in the original frame coordinates.
struct FrameSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct MaskPlan {
    std::set<std::size_t> word_indices;
    std::vector<FrameSpan> spans;  // realized: expanded, merged, clipped
    FillKind fill = FillKind::Silence;
    std::string scheme;   // "none", "rand", "entity", "category"
    double probability = 0.0;
    std::string detail;   // category tag or entity-set label
    std::uint64_t seed = 0;  // stream for the whitenoise fill
};

// Boundary expansion by a fraction of the segment duration; the start is
// clamped at zero, the end is clipped later when realizing frame spans.
std::pair<double, double> expand_alignment(const WordAlignment& a, double factor);

// Independent Bernoulli(p) over word positions, deterministic per seed.
std::set<std::size_t> sample_mask(std::size_t n_words, double p, std::uint64_t seed);
std::set<std::size_t> sample_mask_subset(const std::vector<std::size_t>& eligible, double p,
                                         std::uint64_t seed);

std::vector<std::size_t> matching_positions(const Utterance& u,
                                            const std::set<std::string>& words);
std::vector<std::size_t> category_positions(const Utterance& u, const std::string& category);

// Converts the plan's word indices into merged frame spans (stored back into
// the plan) and rebuilds the frame sequence: each span is removed and replaced
// by a fill block of round(fill_seconds * frame_rate) frames.
FeatMatrix apply_mask(const FeatMatrix& frames, const std::vector<WordAlignment>& alignments,
                      MaskPlan& plan, double frame_rate, const FillSpec& fill,
                      double expand_factor = 0.25);

// Replays already-realized spans (e.g. loaded from a sidecar) against the
// original frames; bitwise-reproduces apply_mask given the same plan.
FeatMatrix apply_spans(const FeatMatrix& frames, const std::vector<FrameSpan>& spans,
                       const FillSpec& fill, double frame_rate, std::uint64_t seed);

struct MaskedCorpus {
    Corpus corpus;
    std::vector<MaskPlan> plans;  // aligned with corpus.utterances
};

// One variant per masking probability per utterance; ids gain a ".p<percent>"
// suffix. Transcripts, visual vectors, and alignments are copied untouched.
MaskedCorpus build_augmented_corpus(const Corpus& corpus, const std::vector<double>& probabilities,
                                    const FillSpec& fill, std::uint64_t seed);

// Same augmentation, but Bernoulli masking is restricted to the listed words.
MaskedCorpus build_entity_augmented_corpus(const Corpus& corpus,
                                           const std::set<std::string>& entity_words,
                                           const std::vector<double>& probabilities,
                                           const FillSpec& fill, std::uint64_t seed);

// Deterministic plans masking every occurrence of the listed words.
std::vector<MaskPlan> build_entity_mask(const Corpus& corpus,
                                        const std::set<std::string>& entity_words);
MaskedCorpus build_entity_testset(const Corpus& corpus, const std::set<std::string>& entity_words,
                                  const FillSpec& fill, std::uint64_t seed);

// Masks every occurrence of words tagged with the category. The category must
// be one the corpus vocabulary knows about, even if it never occurs.
MaskedCorpus build_category_testset(const Corpus& corpus, const std::string& category,
                                    const std::set<std::string>& known_categories,
                                    const FillSpec& fill, std::uint64_t seed);

// Per-dimension 1st percentile over all frames; silence stand-in for corpora
// that do not ship a silence prototype.
std::vector<real_t> silence_percentile(const Corpus& corpus);

FillSpec make_fill(const CorpusMeta& meta, FillKind kind, double noise_mean = 0.0,
                   double noise_std = 1.0);

void save_plan(const MaskPlan& plan, const std::string& path);
MaskPlan load_plan(const std::string& path);
void save_masked_corpus(MaskedCorpus& masked, const std::string& dir);
// Loads the plan sidecars referenced by the corpus records.
std::vector<MaskPlan> load_plans(const Corpus& corpus, const std::string& dir);

}  // namespace mmasr
