#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mmasr/corpus.hpp"

namespace mmasr {

enum class WordCategory { Noun, Place, Adj, Color, Verb, Adv, Cardinal, Func };

inline constexpr std::array<WordCategory, 8> kAllCategories{
    WordCategory::Noun, WordCategory::Place, WordCategory::Adj,      WordCategory::Color,
    WordCategory::Verb, WordCategory::Adv,   WordCategory::Cardinal, WordCategory::Func};

std::string category_name(WordCategory c);
WordCategory category_from_name(const std::string& name);

struct SynthWord {
    std::string surface;
    WordCategory category = WordCategory::Func;
    bool groundable = false;
    FeatMatrix prototype;                  // [frames_per_word x feat_dim]
    std::vector<real_t> visual_embedding;  // all-zero iff not groundable
};

struct VocabSizes {
    std::size_t nouns = 12;
    std::size_t places = 8;
    std::size_t adjectives = 8;
    std::size_t colors = 6;
    std::size_t verbs = 8;
    std::size_t adverbs = 6;
    std::size_t cardinals = 6;
    std::size_t function_words = 6;

    std::size_t of(WordCategory c) const;
};

struct SynthVocab {
    std::vector<SynthWord> words;
    std::size_t feat_dim = 24;
    std::size_t visual_dim = 64;
    std::size_t frames_per_word = 12;
    std::vector<real_t> silence_prototype;

    std::vector<std::size_t> category_members(WordCategory c) const;
    std::optional<std::size_t> find(const std::string& surface) const;
    std::vector<std::string> surfaces(WordCategory c) const;
};

// Prototypes are rejection-sampled until every pair is at least `margin`
// apart in Frobenius distance. Visual embeddings are nonzero exactly for
// groundable categories; verb embeddings are scaled to half strength.
SynthVocab gen_vocab(const VocabSizes& sizes, std::size_t feat_dim, std::size_t visual_dim,
                     std::size_t frames_per_word, double margin, std::uint64_t seed);

void save_vocab(const SynthVocab& vocab, const std::string& path);
SynthVocab load_vocab(const std::string& path);

// Sentence shape: [CARDINAL] [COLOR|ADJ] NOUN VERB [ADV] [FUNC PLACE],
// optional slots drawn independently. Word choice within a category follows
// 1/(rank+1) weights, so some words dominate their category.
struct GrammarSpec {
    double p_cardinal = 0.5;
    double p_attribute = 0.8;
    double p_color_given_attribute = 0.5;
    double p_adverb = 0.5;
    double p_place = 0.8;
};

struct NoiseSpec {
    double acoustic = 0.1;
    double visual = 0.02;
};

struct SynthParams {
    GrammarSpec grammar;
    NoiseSpec noise;
    double frame_rate = 100.0;
    double edge_silence_s = 0.3;  // leading and trailing silence
};

Corpus gen_corpus(const SynthVocab& vocab, std::size_t n_utterances, const SynthParams& params,
                  std::uint64_t seed, const std::string& id_prefix = "u");

// The visual vector is a pure function of the groundable tokens and the
// per-utterance noise seed (non-groundable tokens never touch it).
std::vector<real_t> make_visual_vector(const SynthVocab& vocab,
                                       const std::vector<std::string>& tokens, double sigma,
                                       std::uint64_t seed);

struct OracleDecode {
    std::vector<std::size_t> word_ids;  // groundable bag, sorted
    double best_dist = 0.0;
    double runner_up_dist = 0.0;
    bool ambiguous = false;
};

// Upper-bound decoder: exhaustive nearest-subset match over the grammar's
// groundable slot combinations.
OracleDecode oracle_visual_decode(const SynthVocab& vocab, const std::vector<real_t>& visual,
                                  double ambiguity_tol = 1e-9);

}  // namespace mmasr
