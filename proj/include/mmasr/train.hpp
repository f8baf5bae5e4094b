#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmasr/eval.hpp"
#include "mmasr/masking.hpp"
#include "mmasr/model.hpp"
#include "mmasr/synthdata.hpp"

namespace mmasr {

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 20;
    std::size_t patience = 3;  // epochs without dev-WER improvement before stopping
    double clip_norm = 5.0;
    std::vector<double> mask_probabilities = {0.0, 0.2, 0.4, 0.6};
    FillKind fill = FillKind::Silence;
    double noise_mean = 0.0;
    double noise_std = 1.0;
    std::uint64_t seed = 1;
    FusionKind fusion = FusionKind::HierAttnDF;
    ModelConfig model;
    std::size_t dev_subset = 0;  // cap on dev utterances scored per epoch; 0 = all

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double dev_wer = 0.0;
    Rate dev_recovery;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // index into epochs
    bool diverged = false;
    double wall_clock_s = -1.0;  // not serialized unless explicitly requested
};

void save_train_log(const TrainLog& log, const std::string& path,
                    bool include_wall_clock = false);

class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<TensorPtr> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void zero_grad();
    // Scales all gradients so the global norm is at most max_norm; returns the
    // pre-clip norm.
    double clip_gradients(double max_norm);
    void step();

  private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<real_t>> m_;
    std::vector<std::vector<real_t>> v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct TrainOutcome {
    FusionModel model;  // best-dev parameters
    TrainLog log;
};

// Teacher-forced training over the masked corpus. Batches group utterances of
// similar frame length; the batch order is reshuffled every epoch from an
// epoch-derived seed. Dev WER drives early stopping; the best-dev parameters
// are restored into the returned model. On divergence (non-finite loss) the
// log is flagged and the best parameters so far are kept.
TrainOutcome train(FusionModel model, const MaskedCorpus& train_data,
                   const MaskedCorpus& dev_data, const TrainConfig& config);

enum class TrainScheme { None, EntityMask, RandWordMask };
std::string to_string(TrainScheme scheme);

struct SchemeComparison {
    // scheme name -> category name -> recovery rate on the category test set
    std::map<std::string, std::map<std::string, Rate>> recovery;
    std::map<std::string, TrainLog> logs;
};

// Trains one hierarchical-fusion model per scheme on the same source corpus
// (None = clean audio; EntityMask = noun/place words only; RandWordMask = all
// words), then scores each on per-category fully-masked test sets.
SchemeComparison compare_schemes(const Corpus& train_corpus, const Corpus& dev_corpus,
                                 const Corpus& test_corpus, const SynthVocab& vocab,
                                 const std::vector<TrainScheme>& schemes,
                                 const TrainConfig& config);

// Convenience used by the drivers: NOUN and PLACE surfaces from the vocab.
std::set<std::string> entity_word_set(const SynthVocab& vocab);

Vocab vocab_from_corpus(const Corpus& corpus);

}  // namespace mmasr
