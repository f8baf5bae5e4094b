#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmasr/common.hpp"

namespace mmasr {

struct WordAlignment {
    std::size_t word_index = 0;
    double start_s = 0.0;
    double end_s = 0.0;
};

struct FeatMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<real_t> data;  // row-major

    real_t& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    real_t at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Masking provenance carried by corpus records (the full plan lives in a
// sidecar file next to the features).
struct MaskRef {
    std::string scheme;
    double probability = 0.0;
    std::string plan_path;  // relative to the corpus directory
    std::string source_id;
};

struct Utterance {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<WordAlignment> alignments;  // one per token
    FeatMatrix frames;
    std::vector<real_t> visual;
    std::vector<std::string> categories;  // per token; empty when untagged
    std::optional<MaskRef> mask;
};

struct CorpusMeta {
    std::size_t feature_dim = 0;
    std::size_t visual_dim = 0;
    double frame_rate = 100.0;
    std::vector<real_t> silence_prototype;  // one frame, feature_dim wide
};

struct Corpus {
    CorpusMeta meta;
    std::vector<Utterance> utterances;
};

// Binary feature file: "MMFB" magic, u32 version, u32 rows, u32 cols, then
// rows*cols little-endian 32-bit floats.
void write_feature_file(const std::string& path, const FeatMatrix& m);
FeatMatrix read_feature_file(const std::string& path);

// Corpus directory layout: manifest.json plus feats/<id>.bin (and optional
// plans/<id>.json written by the masking pipeline).
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

std::string feature_rel_path(const std::string& utt_id);

}  // namespace mmasr
