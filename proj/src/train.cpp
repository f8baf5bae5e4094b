#include "mmasr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace mmasr {

using nlohmann::json;

void TrainConfig::validate() const {
    if (patience < 1) throw InputError("patience must be >= 1");
    if (clip_norm <= 0) throw InputError("clip norm must be positive");
    if (batch_size < 1) throw InputError("batch size must be >= 1");
    if (max_epochs < 1) throw InputError("max epochs must be >= 1");
    for (double p : mask_probabilities) {
        if (p < 0.0 || p > 1.0) throw InputError("mask probability outside [0, 1]");
    }
}

// ---- config serialization ---------------------------------------------------

namespace {

json model_config_json(const ModelConfig& m) {
    return {{"feat_dim", m.feat_dim},
            {"enc_hidden", m.enc_hidden},
            {"enc_layers", m.enc_layers},
            {"subsample_layers", m.subsample_layers},
            {"emb_dim", m.emb_dim},
            {"dec_hidden", m.dec_hidden},
            {"attn_dim", m.attn_dim},
            {"visual_dim", m.visual_dim},
            {"visual_proj_dim", m.visual_proj_dim},
            {"hier_attn_dim", m.hier_attn_dim}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    m.feat_dim = j.at("feat_dim").get<std::size_t>();
    m.enc_hidden = j.at("enc_hidden").get<std::size_t>();
    m.enc_layers = j.at("enc_layers").get<std::size_t>();
    m.subsample_layers = j.at("subsample_layers").get<std::vector<std::size_t>>();
    m.emb_dim = j.at("emb_dim").get<std::size_t>();
    m.dec_hidden = j.at("dec_hidden").get<std::size_t>();
    m.attn_dim = j.at("attn_dim").get<std::size_t>();
    m.visual_dim = j.at("visual_dim").get<std::size_t>();
    m.visual_proj_dim = j.at("visual_proj_dim").get<std::size_t>();
    m.hier_attn_dim = j.at("hier_attn_dim").get<std::size_t>();
    return m;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["learning_rate"] = c.learning_rate;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["clip_norm"] = c.clip_norm;
    j["mask_probabilities"] = c.mask_probabilities;
    j["fill"] = to_string(c.fill);
    j["noise_mean"] = c.noise_mean;
    j["noise_std"] = c.noise_std;
    j["seed"] = c.seed;
    j["fusion"] = to_string(c.fusion);
    j["model"] = model_config_json(c.model);
    j["dev_subset"] = c.dev_subset;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("train config parse error: ") + e.what());
    }
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("mask_probabilities")) {
        c.mask_probabilities = j.at("mask_probabilities").get<std::vector<double>>();
    }
    if (j.contains("fill")) c.fill = fill_from_string(j.at("fill").get<std::string>());
    c.noise_mean = j.value("noise_mean", c.noise_mean);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.seed = j.value("seed", c.seed);
    if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.dev_subset = j.value("dev_subset", c.dev_subset);
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing train config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

void save_train_log(const TrainLog& log, const std::string& path, bool include_wall_clock) {
    json j;
    j["format"] = "mmasr-train-log";
    j["version"] = 1;
    json epochs = json::array();
    for (const auto& e : log.epochs) {
        json rec{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_wer", e.dev_wer}};
        rec["dev_recovery"] = {{"num", e.dev_recovery.num}, {"den", e.dev_recovery.den}};
        epochs.push_back(std::move(rec));
    }
    j["epochs"] = std::move(epochs);
    j["best_epoch"] = log.best_epoch;
    j["diverged"] = log.diverged;
    if (include_wall_clock) j["wall_clock_s"] = log.wall_clock_s;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write train log: " + path);
    out << j.dump(2) << "\n";
}

// ---- optimizer ----------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<TensorPtr> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        p->ensure_grad();
        m_.emplace_back(p->numel(), real_t(0));
        v_.emplace_back(p->numel(), real_t(0));
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

double AdamOptimizer::clip_gradients(double max_norm) {
    double norm2 = 0;
    for (const auto& p : params_) {
        for (real_t g : p->grad) norm2 += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(norm2);
    if (norm > max_norm && norm > 0) {
        const real_t scalefac = static_cast<real_t>(max_norm / norm);
        for (auto& p : params_) {
            for (auto& g : p->grad) g *= scalefac;
        }
    }
    return norm;
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double g = p.grad[j];
            m_[i][j] = static_cast<real_t>(beta1_ * m_[i][j] + (1.0 - beta1_) * g);
            v_[i][j] = static_cast<real_t>(beta2_ * v_[i][j] + (1.0 - beta2_) * g * g);
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            p.data[j] -= static_cast<real_t>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

// ---- training loop --------------------------------------------------------------

namespace {

std::vector<std::size_t> token_ids(const Vocab& vocab, const std::vector<std::string>& tokens) {
    std::vector<std::size_t> ids{Vocab::kBos};
    for (const auto& t : tokens) ids.push_back(vocab.id(t));
    ids.push_back(Vocab::kEos);
    return ids;
}

std::vector<std::vector<real_t>> snapshot_params(const FusionModel& model) {
    std::vector<std::vector<real_t>> out;
    for (const auto& p : model.parameters()) out.push_back(p->data);
    return out;
}

void restore_params(FusionModel& model, const std::vector<std::vector<real_t>>& snap) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = snap[i];
}

struct DevEval {
    double wer = 0.0;
    Rate recovery;
};

DevEval score_dev(const FusionModel& model, const MaskedCorpus& dev, std::size_t cap) {
    DevEval out;
    std::size_t errors = 0, ref_tokens = 0;
    const std::size_t n =
        cap == 0 ? dev.corpus.utterances.size() : std::min(cap, dev.corpus.utterances.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& u = dev.corpus.utterances[i];
        auto decoded = greedy_decode(model, u.frames, u.visual,
                                     std::max<std::size_t>(8, 2 * u.tokens.size() + 4));
        std::vector<std::string> hyp;
        for (std::size_t tok : decoded.tokens) hyp.push_back(model.vocab.word(tok));
        auto alignment = align_tokens(u.tokens, hyp);
        errors += alignment.cost();
        ref_tokens += u.tokens.size();
        auto records = mark_recovery(u.tokens, hyp, dev.plans[i].word_indices, alignment);
        const auto rr = recovery_rate(records);
        out.recovery.num += rr.num;
        out.recovery.den += rr.den;
    }
    out.wer = ref_tokens == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(ref_tokens);
    return out;
}

}  // namespace

Vocab vocab_from_corpus(const Corpus& corpus) {
    std::vector<std::vector<std::string>> seqs;
    for (const auto& u : corpus.utterances) seqs.push_back(u.tokens);
    return Vocab::build(seqs);
}

TrainOutcome train(FusionModel model, const MaskedCorpus& train_data,
                   const MaskedCorpus& dev_data, const TrainConfig& config) {
    config.validate();
    if (train_data.corpus.utterances.empty()) throw InputError("training corpus is empty");

    const auto started = std::chrono::steady_clock::now();
    AdamOptimizer opt(model.parameters(), config.learning_rate, config.beta1, config.beta2);

    // batches of similar frame length
    std::vector<std::size_t> order(train_data.corpus.utterances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return train_data.corpus.utterances[a].frames.rows <
               train_data.corpus.utterances[b].frames.rows;
    });
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
        batches.emplace_back(order.begin() + i,
                             order.begin() + std::min(order.size(), i + config.batch_size));
    }

    TrainLog log;
    double best_wer = std::numeric_limits<double>::infinity();
    auto best_snapshot = snapshot_params(model);
    std::size_t epochs_since_improvement = 0;

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        // epoch-derived batch order
        Rng shuffle_rng(derive_seed(config.seed, {0xb41c4e5ULL, epoch}));
        for (std::size_t i = batches.size(); i > 1; --i) {
            std::swap(batches[i - 1], batches[shuffle_rng.uniform_index(i)]);
        }

        double epoch_nll = 0.0;
        std::size_t epoch_tokens = 0;
        bool diverged = false;
        for (const auto& batch : batches) {
            Tape tape;
            TensorPtr total;
            std::size_t tokens = 0;
            for (std::size_t ui : batch) {
                const auto& u = train_data.corpus.utterances[ui];
                auto frames = to_tensor(u.frames);
                auto visual = model.multimodal() ? to_tensor(u.visual) : nullptr;
                auto parts = forward_loss_parts(tape, model, frames, u.frames.rows, visual,
                                                token_ids(model.vocab, u.tokens));
                total = total ? add(tape, total, parts.nll_sum) : parts.nll_sum;
                tokens += parts.tokens;
            }
            auto loss = cmul(tape, total, real_t(1) / static_cast<real_t>(tokens));
            if (!std::isfinite(loss->data[0])) {
                diverged = true;
                break;
            }
            opt.zero_grad();
            tape.backward(loss);
            opt.clip_gradients(config.clip_norm);
            opt.step();
            quantize_parameters(model);
            epoch_nll += static_cast<double>(total->data[0]);
            epoch_tokens += tokens;
        }
        if (diverged) {
            log.diverged = true;
            break;
        }

        auto dev = score_dev(model, dev_data, config.dev_subset);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_tokens == 0 ? 0.0 : epoch_nll / static_cast<double>(epoch_tokens);
        stats.dev_wer = dev.wer;
        stats.dev_recovery = dev.recovery;
        log.epochs.push_back(stats);

        if (dev.wer < best_wer) {
            best_wer = dev.wer;
            best_snapshot = snapshot_params(model);
            log.best_epoch = log.epochs.size() - 1;
            epochs_since_improvement = 0;
        } else {
            ++epochs_since_improvement;
            if (epochs_since_improvement >= config.patience) break;
        }
    }

    restore_params(model, best_snapshot);
    log.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {std::move(model), std::move(log)};
}

// ---- scheme comparison -----------------------------------------------------------

std::string to_string(TrainScheme scheme) {
    switch (scheme) {
        case TrainScheme::None: return "none";
        case TrainScheme::EntityMask: return "entity-mask";
        case TrainScheme::RandWordMask: return "rand-word-mask";
    }
    throw ContractError("unknown training scheme");
}

std::set<std::string> entity_word_set(const SynthVocab& vocab) {
    std::set<std::string> words;
    for (const auto& w : vocab.words) {
        if (w.category == WordCategory::Noun || w.category == WordCategory::Place) {
            words.insert(w.surface);
        }
    }
    return words;
}

SchemeComparison compare_schemes(const Corpus& train_corpus, const Corpus& dev_corpus,
                                 const Corpus& test_corpus, const SynthVocab& vocab,
                                 const std::vector<TrainScheme>& schemes,
                                 const TrainConfig& config) {
    SchemeComparison out;
    const auto fill = make_fill(train_corpus.meta, config.fill, config.noise_mean,
                                config.noise_std);
    const auto entities = entity_word_set(vocab);
    const auto model_vocab = vocab_from_corpus(train_corpus);

    std::set<std::string> known_categories;
    for (auto c : kAllCategories) known_categories.insert(category_name(c));
    const std::vector<std::string> scored_categories{"NOUN", "PLACE",    "ADJ", "COLOR",
                                                     "VERB", "CARDINAL", "ADV"};

    for (auto scheme : schemes) {
        MaskedCorpus train_masked, dev_masked;
        switch (scheme) {
            case TrainScheme::None:
                train_masked = build_augmented_corpus(train_corpus, {0.0}, fill, config.seed);
                dev_masked = build_augmented_corpus(dev_corpus, {0.0}, fill, config.seed + 1);
                break;
            case TrainScheme::EntityMask:
                train_masked = build_entity_augmented_corpus(
                    train_corpus, entities, config.mask_probabilities, fill, config.seed);
                dev_masked = build_entity_augmented_corpus(
                    dev_corpus, entities, config.mask_probabilities, fill, config.seed + 1);
                break;
            case TrainScheme::RandWordMask:
                train_masked = build_augmented_corpus(train_corpus, config.mask_probabilities,
                                                      fill, config.seed);
                dev_masked = build_augmented_corpus(dev_corpus, config.mask_probabilities, fill,
                                                    config.seed + 1);
                break;
        }
        auto model = FusionModel::init(FusionKind::HierAttnDF, config.model, model_vocab,
                                       config.seed);
        auto outcome = train(std::move(model), train_masked, dev_masked, config);
        const std::string scheme_name = to_string(scheme);
        out.logs[scheme_name] = outcome.log;

        for (const auto& category : scored_categories) {
            auto masked_test = build_category_testset(test_corpus, category, known_categories,
                                                      fill, config.seed + 2);
            auto eval = evaluate_corpus(outcome.model, masked_test.corpus, &masked_test.plans);
            out.recovery[scheme_name][category] = eval.report.recovery;
        }
    }
    return out;
}

}  // namespace mmasr
