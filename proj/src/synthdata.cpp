#include "mmasr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace mmasr {

using nlohmann::json;

std::string category_name(WordCategory c) {
    switch (c) {
        case WordCategory::Noun: return "NOUN";
        case WordCategory::Place: return "PLACE";
        case WordCategory::Adj: return "ADJ";
        case WordCategory::Color: return "COLOR";
        case WordCategory::Verb: return "VERB";
        case WordCategory::Adv: return "ADV";
        case WordCategory::Cardinal: return "CARDINAL";
        case WordCategory::Func: return "FUNC";
    }
    throw ContractError("unknown word category");
}

WordCategory category_from_name(const std::string& name) {
    for (auto c : kAllCategories) {
        if (category_name(c) == name) return c;
    }
    throw InputError("unknown category name: " + name);
}

std::size_t VocabSizes::of(WordCategory c) const {
    switch (c) {
        case WordCategory::Noun: return nouns;
        case WordCategory::Place: return places;
        case WordCategory::Adj: return adjectives;
        case WordCategory::Color: return colors;
        case WordCategory::Verb: return verbs;
        case WordCategory::Adv: return adverbs;
        case WordCategory::Cardinal: return cardinals;
        case WordCategory::Func: return function_words;
    }
    return 0;
}

std::vector<std::size_t> SynthVocab::category_members(WordCategory c) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i].category == c) out.push_back(i);
    }
    return out;
}

std::optional<std::size_t> SynthVocab::find(const std::string& surface) const {
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i].surface == surface) return i;
    }
    return std::nullopt;
}

std::vector<std::string> SynthVocab::surfaces(WordCategory c) const {
    std::vector<std::string> out;
    for (std::size_t i : category_members(c)) out.push_back(words[i].surface);
    return out;
}

namespace {

constexpr double kVerbEmbeddingScale = 0.5;
constexpr real_t kSilenceLevel = real_t(-3);
constexpr int kMaxPrototypeRetries = 1000;

bool is_groundable(WordCategory c) {
    switch (c) {
        case WordCategory::Noun:
        case WordCategory::Place:
        case WordCategory::Adj:
        case WordCategory::Color:
        case WordCategory::Cardinal:
        case WordCategory::Verb:
            return true;
        case WordCategory::Adv:
        case WordCategory::Func:
            return false;
    }
    return false;
}

std::string surface_prefix(WordCategory c) {
    switch (c) {
        case WordCategory::Noun: return "noun";
        case WordCategory::Place: return "place";
        case WordCategory::Adj: return "adj";
        case WordCategory::Color: return "color";
        case WordCategory::Verb: return "verb";
        case WordCategory::Adv: return "adv";
        case WordCategory::Cardinal: return "card";
        case WordCategory::Func: return "func";
    }
    return "word";
}

double frobenius_distance(const FeatMatrix& a, const FeatMatrix& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

FeatMatrix random_prototype(Rng& rng, std::size_t frames, std::size_t dim) {
    FeatMatrix m;
    m.rows = frames;
    m.cols = dim;
    m.data.resize(frames * dim);
    for (auto& v : m.data) v = static_cast<real_t>(rng.gaussian());
    return m;
}

// 1/(rank+1) weights: category usage is head-heavy like natural text.
std::size_t zipf_pick(Rng& rng, std::size_t n) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += 1.0 / static_cast<double>(i + 1);
    double r = rng.uniform01() * total;
    for (std::size_t i = 0; i < n; ++i) {
        r -= 1.0 / static_cast<double>(i + 1);
        if (r <= 0) return i;
    }
    return n - 1;
}

}  // namespace

SynthVocab gen_vocab(const VocabSizes& sizes, std::size_t feat_dim, std::size_t visual_dim,
                     std::size_t frames_per_word, double margin, std::uint64_t seed) {
    for (auto c : kAllCategories) {
        if (sizes.of(c) < 1) {
            throw InputError("category " + category_name(c) + " needs at least one word");
        }
    }
    Rng rng(seed);
    SynthVocab vocab;
    vocab.feat_dim = feat_dim;
    vocab.visual_dim = visual_dim;
    vocab.frames_per_word = frames_per_word;
    vocab.silence_prototype.assign(feat_dim, kSilenceLevel);

    for (auto c : kAllCategories) {
        for (std::size_t i = 0; i < sizes.of(c); ++i) {
            SynthWord w;
            w.surface = surface_prefix(c) + (i < 10 ? "0" : "") + std::to_string(i);
            w.category = c;
            w.groundable = is_groundable(c);

            bool placed = false;
            for (int attempt = 0; attempt < kMaxPrototypeRetries && !placed; ++attempt) {
                w.prototype = random_prototype(rng, frames_per_word, feat_dim);
                placed = true;
                for (const auto& other : vocab.words) {
                    if (frobenius_distance(w.prototype, other.prototype) <= margin) {
                        placed = false;
                        break;
                    }
                }
            }
            if (!placed) {
                throw GenerationError(
                    "could not place prototype for " + w.surface + " at margin " +
                    std::to_string(margin) + "; lower the margin or raise the feature dim");
            }

            w.visual_embedding.assign(visual_dim, real_t(0));
            if (w.groundable) {
                const double scale = c == WordCategory::Verb ? kVerbEmbeddingScale : 1.0;
                for (auto& v : w.visual_embedding)
                    v = static_cast<real_t>(scale * rng.gaussian());
            }
            vocab.words.push_back(std::move(w));
        }
    }
    return vocab;
}

void save_vocab(const SynthVocab& vocab, const std::string& path) {
    json j;
    j["format"] = "mmasr-vocab";
    j["version"] = 1;
    j["feat_dim"] = vocab.feat_dim;
    j["visual_dim"] = vocab.visual_dim;
    j["frames_per_word"] = vocab.frames_per_word;
    j["silence_prototype"] = vocab.silence_prototype;
    json words = json::array();
    for (const auto& w : vocab.words) {
        words.push_back({{"surface", w.surface},
                         {"category", category_name(w.category)},
                         {"groundable", w.groundable},
                         {"prototype", w.prototype.data},
                         {"visual_embedding", w.visual_embedding}});
    }
    j["words"] = std::move(words);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocab: " + path);
    out << j.dump(2) << "\n";
}

SynthVocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing vocab: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("vocab parse error in " + path + ": " + e.what());
    }
    if (j.value("format", "") != "mmasr-vocab") {
        throw FormatError("not a vocab file: " + path);
    }
    SynthVocab vocab;
    vocab.feat_dim = j.at("feat_dim").get<std::size_t>();
    vocab.visual_dim = j.at("visual_dim").get<std::size_t>();
    vocab.frames_per_word = j.at("frames_per_word").get<std::size_t>();
    vocab.silence_prototype = j.at("silence_prototype").get<std::vector<real_t>>();
    for (const auto& rec : j.at("words")) {
        SynthWord w;
        w.surface = rec.at("surface").get<std::string>();
        w.category = category_from_name(rec.at("category").get<std::string>());
        w.groundable = rec.at("groundable").get<bool>();
        w.prototype.rows = vocab.frames_per_word;
        w.prototype.cols = vocab.feat_dim;
        w.prototype.data = rec.at("prototype").get<std::vector<real_t>>();
        if (w.prototype.data.size() != w.prototype.rows * w.prototype.cols) {
            throw FormatError("prototype size mismatch for " + w.surface + " in " + path);
        }
        w.visual_embedding = rec.at("visual_embedding").get<std::vector<real_t>>();
        vocab.words.push_back(std::move(w));
    }
    return vocab;
}

std::vector<real_t> make_visual_vector(const SynthVocab& vocab,
                                       const std::vector<std::string>& tokens, double sigma,
                                       std::uint64_t seed) {
    std::vector<real_t> v(vocab.visual_dim, real_t(0));
    std::size_t grounded = 0;
    for (const auto& tok : tokens) {
        auto idx = vocab.find(tok);
        if (!idx || !vocab.words[*idx].groundable) continue;
        for (std::size_t j = 0; j < vocab.visual_dim; ++j)
            v[j] += vocab.words[*idx].visual_embedding[j];
        ++grounded;
    }
    if (grounded > 0) {
        for (auto& x : v) x /= static_cast<real_t>(grounded);
    }
    Rng rng(seed);
    for (auto& x : v) x += static_cast<real_t>(rng.gaussian(0.0, sigma));
    return v;
}

namespace {

struct SlotDraw {
    std::vector<std::string> tokens;
    std::vector<std::string> categories;
};

SlotDraw draw_sentence(const SynthVocab& vocab, const GrammarSpec& g, Rng& rng) {
    SlotDraw out;
    auto emit = [&](WordCategory c) {
        auto members = vocab.category_members(c);
        const std::size_t pick = members[zipf_pick(rng, members.size())];
        out.tokens.push_back(vocab.words[pick].surface);
        out.categories.push_back(category_name(c));
    };
    if (rng.uniform01() < g.p_cardinal) emit(WordCategory::Cardinal);
    if (rng.uniform01() < g.p_attribute) {
        emit(rng.uniform01() < g.p_color_given_attribute ? WordCategory::Color
                                                         : WordCategory::Adj);
    }
    emit(WordCategory::Noun);
    emit(WordCategory::Verb);
    if (rng.uniform01() < g.p_adverb) emit(WordCategory::Adv);
    if (rng.uniform01() < g.p_place) {
        emit(WordCategory::Func);
        emit(WordCategory::Place);
    }
    return out;
}

}  // namespace

Corpus gen_corpus(const SynthVocab& vocab, std::size_t n_utterances, const SynthParams& params,
                  std::uint64_t seed, const std::string& id_prefix) {
    Corpus corpus;
    corpus.meta.feature_dim = vocab.feat_dim;
    corpus.meta.visual_dim = vocab.visual_dim;
    corpus.meta.frame_rate = params.frame_rate;
    corpus.meta.silence_prototype = vocab.silence_prototype;

    const auto edge =
        static_cast<std::size_t>(std::llround(params.edge_silence_s * params.frame_rate));
    const std::size_t L = vocab.frames_per_word;

    for (std::size_t ui = 0; ui < n_utterances; ++ui) {
        Rng tok_rng(derive_seed(seed, {ui, 0}));
        Rng acoustic_rng(derive_seed(seed, {ui, 1}));
        const std::uint64_t visual_seed = derive_seed(seed, {ui, 2});

        auto sentence = draw_sentence(vocab, params.grammar, tok_rng);
        Utterance u;
        {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%06zu", ui);
            u.id = id_prefix + buf;
        }
        u.tokens = sentence.tokens;
        u.categories = sentence.categories;

        const std::size_t n_words = u.tokens.size();
        u.frames.rows = 2 * edge + n_words * L;
        u.frames.cols = vocab.feat_dim;
        u.frames.data.resize(u.frames.rows * u.frames.cols);

        for (std::size_t t = 0; t < u.frames.rows; ++t) {
            for (std::size_t j = 0; j < vocab.feat_dim; ++j)
                u.frames.at(t, j) = vocab.silence_prototype[j];
        }
        for (std::size_t k = 0; k < n_words; ++k) {
            const auto& proto = vocab.words[*vocab.find(u.tokens[k])].prototype;
            for (std::size_t r = 0; r < L; ++r) {
                for (std::size_t j = 0; j < vocab.feat_dim; ++j)
                    u.frames.at(edge + k * L + r, j) = proto.at(r, j);
            }
            u.alignments.push_back({k, static_cast<double>(edge + k * L) / params.frame_rate,
                                    static_cast<double>(edge + (k + 1) * L) / params.frame_rate});
        }
        if (params.noise.acoustic > 0) {
            for (auto& v : u.frames.data)
                v += static_cast<real_t>(acoustic_rng.gaussian(0.0, params.noise.acoustic));
        }
        u.visual = make_visual_vector(vocab, u.tokens, params.noise.visual, visual_seed);
        corpus.utterances.push_back(std::move(u));
    }
    return corpus;
}

// ---- oracle ---------------------------------------------------------------------

namespace {

struct BagSearch {
    const SynthVocab& vocab;
    const std::vector<real_t>& visual;
    std::vector<double> dot_with_visual;          // per word
    std::vector<std::vector<double>> gram;        // pairwise embedding dots
    double visual_norm2 = 0;

    std::vector<std::size_t> current;
    double cur_dot = 0;       // sum of v . e_i
    double cur_norm2 = 0;     // || sum e_i ||^2

    double best = std::numeric_limits<double>::infinity();
    double runner_up = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_bag;

    explicit BagSearch(const SynthVocab& v, const std::vector<real_t>& vis)
        : vocab(v), visual(vis) {
        const std::size_t n = vocab.words.size();
        dot_with_visual.assign(n, 0.0);
        gram.assign(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const auto& ei = vocab.words[i].visual_embedding;
            for (std::size_t j = 0; j < vocab.visual_dim; ++j)
                dot_with_visual[i] += static_cast<double>(visual[j]) * ei[j];
            for (std::size_t k = i; k < n; ++k) {
                const auto& ek = vocab.words[k].visual_embedding;
                double d = 0;
                for (std::size_t j = 0; j < vocab.visual_dim; ++j)
                    d += static_cast<double>(ei[j]) * ek[j];
                gram[i][k] = gram[k][i] = d;
            }
        }
        for (auto x : visual) visual_norm2 += static_cast<double>(x) * x;
    }

    void push(std::size_t w) {
        cur_dot += dot_with_visual[w];
        cur_norm2 += gram[w][w];
        for (std::size_t u : current) cur_norm2 += 2.0 * gram[w][u];
        current.push_back(w);
    }

    void pop() {
        const std::size_t w = current.back();
        current.pop_back();
        cur_dot -= dot_with_visual[w];
        cur_norm2 -= gram[w][w];
        for (std::size_t u : current) cur_norm2 -= 2.0 * gram[w][u];
    }

    void consider() {
        const double k = static_cast<double>(current.size());
        double dist;
        if (current.empty()) {
            dist = visual_norm2;
        } else {
            // || v - mean ||^2 = ||v||^2 - 2 (v . sum)/k + ||sum||^2 / k^2
            dist = visual_norm2 - 2.0 * cur_dot / k + cur_norm2 / (k * k);
        }
        if (dist < best) {
            runner_up = best;
            best = dist;
            best_bag = current;
        } else if (dist < runner_up) {
            runner_up = dist;
        }
    }
};

}  // namespace

OracleDecode oracle_visual_decode(const SynthVocab& vocab, const std::vector<real_t>& visual,
                                  double ambiguity_tol) {
    if (visual.size() != vocab.visual_dim) {
        throw InputError("visual vector dim " + std::to_string(visual.size()) +
                         " != vocab visual dim " + std::to_string(vocab.visual_dim));
    }
    BagSearch search(vocab, visual);
    const auto cardinals = vocab.category_members(WordCategory::Cardinal);
    auto attributes = vocab.category_members(WordCategory::Color);
    {
        auto adjs = vocab.category_members(WordCategory::Adj);
        attributes.insert(attributes.end(), adjs.begin(), adjs.end());
    }
    const auto nouns = vocab.category_members(WordCategory::Noun);
    const auto verbs = vocab.category_members(WordCategory::Verb);
    const auto places = vocab.category_members(WordCategory::Place);

    auto for_optional = [](const std::vector<std::size_t>& members, auto&& body) {
        body(std::optional<std::size_t>{});
        for (std::size_t w : members) body(std::optional<std::size_t>{w});
    };

    // every slot optional: the search space covers degenerate bags (empty,
    // singleton) as well as every grammar-reachable combination
    for_optional(cardinals, [&](std::optional<std::size_t> card) {
        if (card) search.push(*card);
        for_optional(attributes, [&](std::optional<std::size_t> attr) {
            if (attr) search.push(*attr);
            for_optional(nouns, [&](std::optional<std::size_t> noun) {
                if (noun) search.push(*noun);
                for_optional(verbs, [&](std::optional<std::size_t> verb) {
                    if (verb) search.push(*verb);
                    for_optional(places, [&](std::optional<std::size_t> place) {
                        if (place) search.push(*place);
                        search.consider();
                        if (place) search.pop();
                    });
                    if (verb) search.pop();
                });
                if (noun) search.pop();
            });
            if (attr) search.pop();
        });
        if (card) search.pop();
    });

    OracleDecode out;
    out.word_ids = search.best_bag;
    std::sort(out.word_ids.begin(), out.word_ids.end());
    out.best_dist = std::sqrt(std::max(0.0, search.best));
    out.runner_up_dist = std::sqrt(std::max(0.0, search.runner_up));
    out.ambiguous = (out.runner_up_dist - out.best_dist) < ambiguity_tol;
    return out;
}

}  // namespace mmasr
