#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmasr/corpus.hpp"

using namespace mmasr;
namespace fs = std::filesystem;

namespace {

Corpus sample_corpus() {
    Corpus c;
    c.meta.feature_dim = 3;
    c.meta.visual_dim = 2;
    c.meta.frame_rate = 100.0;
    c.meta.silence_prototype = {-3.0, -3.0, -3.0};

    Utterance u;
    u.id = "u000000";
    u.tokens = {"a", "dog"};
    u.alignments = {{0, 0.10, 0.20}, {1, 0.20, 0.40}};
    u.frames.rows = 5;
    u.frames.cols = 3;
    u.frames.data = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
    u.visual = {0.5, -0.5};
    u.categories = {"FUNC", "NOUN"};
    c.utterances.push_back(u);
    return c;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("mmasr_corpus_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("feature file round trip and payload validation") {
    TempDir tmp;
    FeatMatrix m;
    m.rows = 2;
    m.cols = 3;
    m.data = {1.5, -2.25, 0.0, 4.0, 5.5, -6.75};
    const auto path = (tmp.path / "x.bin").string();
    write_feature_file(path, m);
    auto back = read_feature_file(path);
    CHECK(back.rows == 2);
    CHECK(back.cols == 3);
    CHECK(back.data == m.data);

    // truncate the payload
    fs::resize_file(path, fs::file_size(path) - 4);
    CHECK_THROWS_AS(read_feature_file(path), FormatError);
    CHECK_THROWS_AS(read_feature_file((tmp.path / "absent.bin").string()), IoError);
}

TEST_CASE("corpus save/load round trip preserves every field") {
    TempDir tmp;
    auto corpus = sample_corpus();
    save_corpus(corpus, tmp.path.string());
    auto back = load_corpus(tmp.path.string());
    REQUIRE(back.utterances.size() == 1);
    const auto& u = back.utterances[0];
    CHECK(u.id == "u000000");
    CHECK(u.tokens == corpus.utterances[0].tokens);
    CHECK(u.categories == corpus.utterances[0].categories);
    CHECK(u.frames.data == corpus.utterances[0].frames.data);
    CHECK(u.visual == corpus.utterances[0].visual);
    CHECK(u.alignments.size() == 2);
    CHECK(u.alignments[1].start_s == 0.20);
    CHECK(back.meta.silence_prototype == corpus.meta.silence_prototype);

    // saved twice -> identical manifest bytes
    TempDir tmp2;
    save_corpus(back, tmp2.path.string());
    std::ifstream f1(tmp.path / "manifest.json"), f2(tmp2.path / "manifest.json");
    std::string m1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string m2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(m1 == m2);
}

TEST_CASE("loader rejects alignment/token count mismatch with the utterance id") {
    TempDir tmp;
    auto corpus = sample_corpus();
    corpus.utterances[0].alignments.pop_back();
    // save_corpus writes whatever it is given; corrupt on purpose
    save_corpus(corpus, tmp.path.string());
    CHECK_THROWS_WITH_AS(load_corpus(tmp.path.string()), doctest::Contains("u000000"),
                         FormatError);
}

TEST_CASE("loader rejects non-uniform feature dims") {
    TempDir tmp;
    auto corpus = sample_corpus();
    save_corpus(corpus, tmp.path.string());
    // overwrite the feature file with a different width
    FeatMatrix wrong;
    wrong.rows = 5;
    wrong.cols = 4;
    wrong.data.assign(20, 0.0);
    write_feature_file((tmp.path / "feats" / "u000000.bin").string(), wrong);
    CHECK_THROWS_WITH_AS(load_corpus(tmp.path.string()), doctest::Contains("feature dim"),
                         FormatError);
}

TEST_CASE("loader rejects missing feature files") {
    TempDir tmp;
    save_corpus(sample_corpus(), tmp.path.string());
    fs::remove(tmp.path / "feats" / "u000000.bin");
    CHECK_THROWS_WITH_AS(load_corpus(tmp.path.string()), doctest::Contains("missing feature file"),
                         FormatError);
}

TEST_CASE("empty corpus round trips") {
    TempDir tmp;
    Corpus c;
    c.meta.feature_dim = 4;
    c.meta.visual_dim = 2;
    c.meta.silence_prototype = {0, 0, 0, 0};
    save_corpus(c, tmp.path.string());
    auto back = load_corpus(tmp.path.string());
    CHECK(back.utterances.empty());
    CHECK(back.meta.feature_dim == 4);
}
