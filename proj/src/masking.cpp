#include "mmasr/masking.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace mmasr {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(FillKind kind) {
    return kind == FillKind::Silence ? "silence" : "whitenoise";
}

FillKind fill_from_string(const std::string& name) {
    if (name == "silence") return FillKind::Silence;
    if (name == "whitenoise") return FillKind::Whitenoise;
    throw InputError("unknown fill kind: " + name);
}

std::pair<double, double> expand_alignment(const WordAlignment& a, double factor) {
    if (factor < 0) throw InputError("expansion factor must be >= 0");
    const double d = a.end_s - a.start_s;
    return {std::max(0.0, a.start_s - factor * d), a.end_s + factor * d};
}

std::set<std::size_t> sample_mask(std::size_t n_words, double p, std::uint64_t seed) {
    std::vector<std::size_t> all(n_words);
    for (std::size_t i = 0; i < n_words; ++i) all[i] = i;
    return sample_mask_subset(all, p, seed);
}

std::set<std::size_t> sample_mask_subset(const std::vector<std::size_t>& eligible, double p,
                                         std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw InputError("mask probability must lie in [0, 1]");
    Rng rng(seed);
    std::set<std::size_t> out;
    for (std::size_t idx : eligible) {
        if (p >= 1.0) {
            out.insert(idx);
        } else if (p > 0.0 && rng.bernoulli(p)) {
            out.insert(idx);
        }
    }
    return out;
}

std::vector<std::size_t> matching_positions(const Utterance& u,
                                            const std::set<std::string>& words) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
        if (words.count(u.tokens[i])) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> category_positions(const Utterance& u, const std::string& category) {
    if (u.categories.size() != u.tokens.size()) {
        throw InputError("utterance " + u.id + " carries no category tags");
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
        if (u.categories[i] == category) out.push_back(i);
    }
    return out;
}

namespace {

std::vector<FrameSpan> realize_spans(const std::vector<WordAlignment>& alignments,
                                     const std::set<std::size_t>& word_indices,
                                     double frame_rate, std::size_t n_frames,
                                     double expand_factor) {
    std::vector<FrameSpan> raw;
    for (std::size_t idx : word_indices) {
        const WordAlignment* a = nullptr;
        for (const auto& cand : alignments) {
            if (cand.word_index == idx) {
                a = &cand;
                break;
            }
        }
        if (!a) throw InputError("masked word index " + std::to_string(idx) + " has no alignment");
        auto [start_s, end_s] = expand_alignment(*a, expand_factor);
        const auto b = static_cast<long long>(std::llround(start_s * frame_rate));
        const auto e = static_cast<long long>(std::llround(end_s * frame_rate));
        const std::size_t begin = static_cast<std::size_t>(std::max(0LL, b));
        const std::size_t end =
            std::min(n_frames, static_cast<std::size_t>(std::max(0LL, e)));
        if (end > begin) raw.push_back({begin, end});
    }
    std::sort(raw.begin(), raw.end(),
              [](const FrameSpan& a, const FrameSpan& b) { return a.begin < b.begin; });
    std::vector<FrameSpan> merged;
    for (const auto& s : raw) {
        if (!merged.empty() && s.begin <= merged.back().end) {
            merged.back().end = std::max(merged.back().end, s.end);
        } else {
            merged.push_back(s);
        }
    }
    return merged;
}

void append_fill(FeatMatrix& out, const FillSpec& fill, std::size_t n_fill, Rng& noise) {
    const std::size_t d = out.cols;
    for (std::size_t t = 0; t < n_fill; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            if (fill.kind == FillKind::Silence) {
                out.data.push_back(fill.silence_prototype[j]);
            } else {
                out.data.push_back(
                    static_cast<real_t>(noise.gaussian(fill.noise_mean, fill.noise_std)));
            }
        }
        ++out.rows;
    }
}

}  // namespace

FeatMatrix apply_spans(const FeatMatrix& frames, const std::vector<FrameSpan>& spans,
                       const FillSpec& fill, double frame_rate, std::uint64_t seed) {
    if (frame_rate <= 0) throw InputError("frame rate must be positive");
    if (fill.kind == FillKind::Silence && fill.silence_prototype.size() != frames.cols) {
        throw InputError("silence prototype dim " + std::to_string(fill.silence_prototype.size()) +
                         " != feature dim " + std::to_string(frames.cols));
    }
    const auto n_fill = static_cast<std::size_t>(std::llround(fill.fill_seconds * frame_rate));
    Rng noise(seed);
    FeatMatrix out;
    out.cols = frames.cols;
    out.data.reserve(frames.data.size());
    std::size_t cursor = 0;
    auto copy_range = [&](std::size_t from, std::size_t to) {
        out.data.insert(out.data.end(), frames.data.begin() + from * frames.cols,
                        frames.data.begin() + to * frames.cols);
        out.rows += to - from;
    };
    for (const auto& span : spans) {
        copy_range(cursor, span.begin);
        append_fill(out, fill, n_fill, noise);
        cursor = span.end;
    }
    copy_range(cursor, frames.rows);
    return out;
}

FeatMatrix apply_mask(const FeatMatrix& frames, const std::vector<WordAlignment>& alignments,
                      MaskPlan& plan, double frame_rate, const FillSpec& fill,
                      double expand_factor) {
    if (frame_rate <= 0) throw InputError("frame rate must be positive");
    plan.fill = fill.kind;
    plan.spans =
        realize_spans(alignments, plan.word_indices, frame_rate, frames.rows, expand_factor);
    if (plan.spans.empty()) {
        FeatMatrix copy = frames;
        return copy;
    }
    return apply_spans(frames, plan.spans, fill, frame_rate, plan.seed);
}

namespace {

std::string percent_suffix(double p) {
    return ".p" + std::to_string(static_cast<int>(std::llround(p * 100.0)));
}

MaskedCorpus build_variants(const Corpus& corpus, const std::vector<double>& probabilities,
                            const FillSpec& fill, std::uint64_t seed, const char* scheme,
                            const std::set<std::string>* word_filter) {
    if (probabilities.empty()) throw InputError("probability list must be non-empty");
    for (double p : probabilities) {
        if (p < 0.0 || p > 1.0) throw InputError("masking probability outside [0, 1]");
    }
    MaskedCorpus out;
    out.corpus.meta = corpus.meta;
    for (std::size_t ui = 0; ui < corpus.utterances.size(); ++ui) {
        const auto& src = corpus.utterances[ui];
        for (std::size_t pi = 0; pi < probabilities.size(); ++pi) {
            const double p = probabilities[pi];
            const std::uint64_t sample_seed = derive_seed(seed, {ui, pi, 0});
            MaskPlan plan;
            plan.scheme = scheme;
            plan.probability = p;
            plan.seed = derive_seed(seed, {ui, pi, 1});
            if (word_filter) {
                plan.word_indices =
                    sample_mask_subset(matching_positions(src, *word_filter), p, sample_seed);
                plan.detail = "entity-set";
            } else {
                plan.word_indices = sample_mask(src.tokens.size(), p, sample_seed);
            }
            Utterance variant = src;
            variant.id = src.id + percent_suffix(p);
            variant.frames = apply_mask(src.frames, src.alignments, plan,
                                        corpus.meta.frame_rate, fill);
            variant.mask = MaskRef{plan.scheme, p, "plans/" + variant.id + ".json", src.id};
            out.corpus.utterances.push_back(std::move(variant));
            out.plans.push_back(std::move(plan));
        }
    }
    return out;
}

MaskedCorpus build_full_occurrence_testset(const Corpus& corpus,
                                           std::vector<std::vector<std::size_t>> positions,
                                           const FillSpec& fill, std::uint64_t seed,
                                           const char* scheme, const std::string& detail,
                                           const std::string& suffix) {
    MaskedCorpus out;
    out.corpus.meta = corpus.meta;
    for (std::size_t ui = 0; ui < corpus.utterances.size(); ++ui) {
        const auto& src = corpus.utterances[ui];
        MaskPlan plan;
        plan.scheme = scheme;
        plan.probability = 1.0;
        plan.detail = detail;
        plan.seed = derive_seed(seed, {ui, 1});
        plan.word_indices.insert(positions[ui].begin(), positions[ui].end());
        Utterance variant = src;
        variant.id = src.id + suffix;
        variant.frames =
            apply_mask(src.frames, src.alignments, plan, corpus.meta.frame_rate, fill);
        variant.mask = MaskRef{plan.scheme, 1.0, "plans/" + variant.id + ".json", src.id};
        out.corpus.utterances.push_back(std::move(variant));
        out.plans.push_back(std::move(plan));
    }
    return out;
}

}  // namespace

MaskedCorpus build_augmented_corpus(const Corpus& corpus, const std::vector<double>& probabilities,
                                    const FillSpec& fill, std::uint64_t seed) {
    return build_variants(corpus, probabilities, fill, seed, "rand", nullptr);
}

MaskedCorpus build_entity_augmented_corpus(const Corpus& corpus,
                                           const std::set<std::string>& entity_words,
                                           const std::vector<double>& probabilities,
                                           const FillSpec& fill, std::uint64_t seed) {
    if (entity_words.empty()) throw InputError("entity word set must be non-empty");
    return build_variants(corpus, probabilities, fill, seed, "entity", &entity_words);
}

std::vector<MaskPlan> build_entity_mask(const Corpus& corpus,
                                        const std::set<std::string>& entity_words) {
    if (entity_words.empty()) throw InputError("entity word set must be non-empty");
    std::vector<MaskPlan> plans;
    for (const auto& u : corpus.utterances) {
        MaskPlan plan;
        plan.scheme = "entity";
        plan.probability = 1.0;
        plan.detail = "entity-set";
        auto positions = matching_positions(u, entity_words);
        plan.word_indices.insert(positions.begin(), positions.end());
        plans.push_back(std::move(plan));
    }
    return plans;
}

MaskedCorpus build_entity_testset(const Corpus& corpus, const std::set<std::string>& entity_words,
                                  const FillSpec& fill, std::uint64_t seed) {
    if (entity_words.empty()) throw InputError("entity word set must be non-empty");
    std::vector<std::vector<std::size_t>> positions;
    for (const auto& u : corpus.utterances) positions.push_back(matching_positions(u, entity_words));
    return build_full_occurrence_testset(corpus, std::move(positions), fill, seed, "entity",
                                         "entity-set", ".entity");
}

MaskedCorpus build_category_testset(const Corpus& corpus, const std::string& category,
                                    const std::set<std::string>& known_categories,
                                    const FillSpec& fill, std::uint64_t seed) {
    if (!known_categories.count(category)) {
        throw InputError("unknown category: " + category);
    }
    std::vector<std::vector<std::size_t>> positions;
    for (const auto& u : corpus.utterances) positions.push_back(category_positions(u, category));
    return build_full_occurrence_testset(corpus, std::move(positions), fill, seed, "category",
                                         category, ".cat-" + category);
}

std::vector<real_t> silence_percentile(const Corpus& corpus) {
    const std::size_t d = corpus.meta.feature_dim;
    std::vector<real_t> proto(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        std::vector<real_t> column;
        for (const auto& u : corpus.utterances) {
            for (std::size_t t = 0; t < u.frames.rows; ++t) column.push_back(u.frames.at(t, j));
        }
        if (column.empty()) throw InputError("cannot derive a silence prototype from no frames");
        const std::size_t k = column.size() / 100;
        std::nth_element(column.begin(), column.begin() + k, column.end());
        proto[j] = column[k];
    }
    return proto;
}

FillSpec make_fill(const CorpusMeta& meta, FillKind kind, double noise_mean, double noise_std) {
    FillSpec fill;
    fill.kind = kind;
    fill.silence_prototype = meta.silence_prototype;
    fill.noise_mean = noise_mean;
    fill.noise_std = noise_std;
    return fill;
}

// ---- sidecars ------------------------------------------------------------------

void save_plan(const MaskPlan& plan, const std::string& path) {
    json j;
    j["word_indices"] = plan.word_indices;
    json spans = json::array();
    for (const auto& s : plan.spans) spans.push_back({s.begin, s.end});
    j["spans"] = spans;
    j["fill"] = to_string(plan.fill);
    j["scheme"] = plan.scheme;
    j["probability"] = plan.probability;
    j["detail"] = plan.detail;
    j["seed"] = plan.seed;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write mask plan: " + path);
    out << j.dump(2) << "\n";
}

MaskPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing mask plan: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("mask plan parse error in " + path + ": " + e.what());
    }
    MaskPlan plan;
    plan.word_indices = j.at("word_indices").get<std::set<std::size_t>>();
    for (const auto& s : j.at("spans")) {
        plan.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    plan.fill = fill_from_string(j.at("fill").get<std::string>());
    plan.scheme = j.at("scheme").get<std::string>();
    plan.probability = j.at("probability").get<double>();
    plan.detail = j.at("detail").get<std::string>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    return plan;
}

void save_masked_corpus(MaskedCorpus& masked, const std::string& dir) {
    if (masked.plans.size() != masked.corpus.utterances.size()) {
        throw ContractError("plan count does not match utterance count");
    }
    save_corpus(masked.corpus, dir);
    fs::create_directories(fs::path(dir) / "plans");
    for (std::size_t i = 0; i < masked.plans.size(); ++i) {
        const auto& u = masked.corpus.utterances[i];
        if (!u.mask) throw ContractError("masked utterance " + u.id + " lacks a mask reference");
        save_plan(masked.plans[i], (fs::path(dir) / u.mask->plan_path).string());
    }
}

std::vector<MaskPlan> load_plans(const Corpus& corpus, const std::string& dir) {
    std::vector<MaskPlan> plans;
    for (const auto& u : corpus.utterances) {
        if (!u.mask) throw InputError("utterance " + u.id + " has no mask reference");
        plans.push_back(load_plan((fs::path(dir) / u.mask->plan_path).string()));
    }
    return plans;
}

}  // namespace mmasr
