#include "mmasr/corpus.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace mmasr {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "feature and checkpoint formats assume a little-endian host");

namespace {

constexpr char kFeatMagic[4] = {'M', 'M', 'F', 'B'};
constexpr std::uint32_t kFeatVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("truncated feature file: " + path);
    return v;
}

}  // namespace

std::string feature_rel_path(const std::string& utt_id) { return "feats/" + utt_id + ".bin"; }

void write_feature_file(const std::string& path, const FeatMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write feature file: " + path);
    out.write(kFeatMagic, 4);
    write_u32(out, kFeatVersion);
    write_u32(out, static_cast<std::uint32_t>(m.rows));
    write_u32(out, static_cast<std::uint32_t>(m.cols));
    std::vector<float> payload(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) payload[i] = static_cast<float>(m.data[i]);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw IoError("short write to feature file: " + path);
}

FeatMatrix read_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing feature file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFeatMagic, 4) != 0) {
        throw FormatError("bad feature file magic in " + path);
    }
    const std::uint32_t version = read_u32(in, path);
    if (version != kFeatVersion) {
        throw FormatError("feature file version mismatch in " + path + ": expected " +
                          std::to_string(kFeatVersion) + ", found " + std::to_string(version));
    }
    FeatMatrix m;
    m.rows = read_u32(in, path);
    m.cols = read_u32(in, path);
    std::vector<float> payload(m.rows * m.cols);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!in) {
        throw FormatError("feature payload shorter than " + std::to_string(m.rows) + "x" +
                          std::to_string(m.cols) + " in " + path);
    }
    m.data.assign(payload.begin(), payload.end());
    return m;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "feats");
    json manifest;
    manifest["format"] = "mmasr-corpus";
    manifest["version"] = 1;
    manifest["feature_dim"] = corpus.meta.feature_dim;
    manifest["visual_dim"] = corpus.meta.visual_dim;
    manifest["frame_rate"] = corpus.meta.frame_rate;
    manifest["silence_prototype"] = corpus.meta.silence_prototype;
    json utts = json::array();
    for (const auto& u : corpus.utterances) {
        const std::string rel = feature_rel_path(u.id);
        write_feature_file((fs::path(dir) / rel).string(), u.frames);
        json rec;
        rec["id"] = u.id;
        rec["features"] = rel;
        rec["tokens"] = u.tokens;
        json aligns = json::array();
        for (const auto& a : u.alignments) aligns.push_back({a.word_index, a.start_s, a.end_s});
        rec["alignments"] = aligns;
        rec["visual"] = u.visual;
        if (!u.categories.empty()) rec["categories"] = u.categories;
        if (u.mask) {
            rec["mask"] = {{"scheme", u.mask->scheme},
                           {"probability", u.mask->probability},
                           {"plan", u.mask->plan_path},
                           {"source_id", u.mask->source_id}};
        }
        utts.push_back(std::move(rec));
    }
    manifest["utterances"] = std::move(utts);
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
    const auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("missing manifest: " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError("manifest parse error in " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "mmasr-corpus") {
        throw FormatError("not a corpus manifest: " + manifest_path.string());
    }
    Corpus corpus;
    corpus.meta.feature_dim = manifest.at("feature_dim").get<std::size_t>();
    corpus.meta.visual_dim = manifest.at("visual_dim").get<std::size_t>();
    corpus.meta.frame_rate = manifest.at("frame_rate").get<double>();
    corpus.meta.silence_prototype = manifest.at("silence_prototype").get<std::vector<real_t>>();

    for (const auto& rec : manifest.at("utterances")) {
        Utterance u;
        u.id = rec.at("id").get<std::string>();
        u.tokens = rec.at("tokens").get<std::vector<std::string>>();
        for (const auto& a : rec.at("alignments")) {
            u.alignments.push_back(
                {a.at(0).get<std::size_t>(), a.at(1).get<double>(), a.at(2).get<double>()});
        }
        if (u.alignments.size() != u.tokens.size()) {
            throw FormatError("alignment count " + std::to_string(u.alignments.size()) +
                              " != token count " + std::to_string(u.tokens.size()) +
                              " in utterance " + u.id);
        }
        u.visual = rec.at("visual").get<std::vector<real_t>>();
        if (u.visual.size() != corpus.meta.visual_dim) {
            throw FormatError("visual dim " + std::to_string(u.visual.size()) +
                              " != corpus visual dim " + std::to_string(corpus.meta.visual_dim) +
                              " in utterance " + u.id);
        }
        if (rec.contains("categories")) {
            u.categories = rec.at("categories").get<std::vector<std::string>>();
            if (u.categories.size() != u.tokens.size()) {
                throw FormatError("category count != token count in utterance " + u.id);
            }
        }
        const auto feat_path = fs::path(dir) / rec.at("features").get<std::string>();
        if (!fs::exists(feat_path)) {
            throw FormatError("missing feature file " + feat_path.string() + " for utterance " +
                              u.id);
        }
        u.frames = read_feature_file(feat_path.string());
        if (u.frames.cols != corpus.meta.feature_dim) {
            throw FormatError("feature dim " + std::to_string(u.frames.cols) +
                              " != corpus feature dim " +
                              std::to_string(corpus.meta.feature_dim) + " in utterance " + u.id);
        }
        if (rec.contains("mask")) {
            const auto& m = rec.at("mask");
            u.mask = MaskRef{m.at("scheme").get<std::string>(), m.at("probability").get<double>(),
                             m.at("plan").get<std::string>(), m.at("source_id").get<std::string>()};
        }
        corpus.utterances.push_back(std::move(u));
    }
    return corpus;
}

}  // namespace mmasr
