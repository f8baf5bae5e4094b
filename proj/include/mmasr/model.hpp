#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmasr/corpus.hpp"
#include "mmasr/layers.hpp"

namespace mmasr {

TensorPtr to_tensor(const FeatMatrix& m);
TensorPtr to_tensor(const std::vector<real_t>& v);

enum class FusionKind { Unimodal, ShiftAdapt, EarlyDF, WeightedDF, MiddleDF, HierAttnDF };

std::string to_string(FusionKind kind);
FusionKind fusion_from_string(const std::string& name);

// Token inventory with fixed reserved slots. Word ids are stable across runs:
// reserved tokens first, then the sorted unique corpus words.
class Vocab {
  public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;
    static constexpr std::size_t kUnk = 3;

    Vocab() = default;
    explicit Vocab(std::vector<std::string> words);

    static Vocab build(const std::vector<std::vector<std::string>>& token_sequences);

    std::size_t size() const { return words_.size(); }
    std::size_t id(const std::string& word) const;
    const std::string& word(std::size_t id) const;
    const std::vector<std::string>& words() const { return words_; }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct ModelConfig {
    std::size_t feat_dim = 24;
    std::size_t enc_hidden = 16;  // per direction; encoder state dim e = 2*enc_hidden
    std::size_t enc_layers = 4;
    std::vector<std::size_t> subsample_layers = {1, 2};
    std::size_t emb_dim = 24;
    std::size_t dec_hidden = 32;
    std::size_t attn_dim = 32;
    std::size_t visual_dim = 64;        // raw visual feature dim
    std::size_t visual_proj_dim = 256;  // learned projection of the raw visual vector
    std::size_t hier_attn_dim = 32;

    std::size_t enc_state_dim() const { return 2 * enc_hidden; }
    std::set<std::size_t> subsample_set() const {
        return {subsample_layers.begin(), subsample_layers.end()};
    }
};

// Encoder-decoder recognizer with exactly one fusion strategy. Read-only use
// (decoding) may be shared; training must own the model exclusively.
struct FusionModel {
    FusionKind kind = FusionKind::Unimodal;
    ModelConfig config;
    Vocab vocab;

    TensorPtr embedding;  // [V x emb]
    std::vector<BiLstmLayer> encoder;
    GruCellParams gru1;        // input: token embedding
    AttentionParams attention; // items: encoder states, query: gru1 state
    GruCellParams gru2;        // input: context vector
    TensorPtr out_proj;        // [V x dec_hidden]

    // Fusion-specific parameters (null when the kind does not use them).
    TensorPtr shift_w;        // [feat x visual]        ShiftAdapt
    TensorPtr shift_b;        // [feat]                 ShiftAdapt
    TensorPtr visual_proj;    // [vp x visual]          decoder fusions
    TensorPtr weighted_proj;  // [emb x vp]             WeightedDF
    TensorPtr fusion_proj;    // EarlyDF [emb x emb+vp], WeightedDF [emb x 2emb],
                              // MiddleDF [e x e+vp]
    TensorPtr hier_proj;      // [e x vp]               HierAttnDF
    AttentionParams hier_attention;  // over {audio context, projected visual}

    static FusionModel init(FusionKind kind, const ModelConfig& config, Vocab vocab,
                            std::uint64_t seed);

    // Stable order; defines the checkpoint blob layout.
    std::vector<TensorPtr> parameters() const;
    std::size_t parameter_count() const;

    bool multimodal() const { return kind != FusionKind::Unimodal; }
};

struct DecoderState {
    TensorPtr h1;
    TensorPtr h2;
};

DecoderState initial_state(const FusionModel& model);

struct StepTrace {
    std::size_t token = 0;
    double log_prob = 0.0;
    std::vector<real_t> audio_weights;   // over encoder states
    std::vector<real_t> audio_context;   // context vector before hierarchical fusion
    double audio_w = -1.0;               // hierarchical split; <0 when not hierarchical
    double visual_w = -1.0;
};

struct DecodeResult {
    std::vector<std::size_t> tokens;  // emitted tokens, terminating eos excluded
    std::vector<StepTrace> steps;     // one per emitted token
    bool hierarchical = false;
};

struct StepOutput {
    TensorPtr logits;
    DecoderState state;
    TensorPtr audio_weights;
    TensorPtr audio_context;
    TensorPtr hier_weights;     // [2] = (audio, visual); null unless HierAttnDF
    TensorPtr weighted_lambda;  // scalar gate; null unless WeightedDF
};

// Runs the (possibly shift-adapted) encoder over the first n_valid frame rows.
TensorPtr encode(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                 std::size_t n_valid, const TensorPtr& visual);
TensorPtr encode(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                 const TensorPtr& visual);

StepOutput decode_step(Tape& tape, const FusionModel& model, const TensorPtr& enc_states,
                       const TensorPtr& visual, std::size_t y_prev, const DecoderState& state);

// Mean token-level negative log-likelihood under teacher forcing. The target
// sequence starts with bos and ends with eos; pad targets are skipped.
TensorPtr forward_loss(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                       std::size_t n_valid, const TensorPtr& visual,
                       const std::vector<std::size_t>& target);

// Same, but returns the unscaled sum and the token count for batch averaging.
struct LossParts {
    TensorPtr nll_sum;
    std::size_t tokens = 0;
};
LossParts forward_loss_parts(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                             std::size_t n_valid, const TensorPtr& visual,
                             const std::vector<std::size_t>& target);

DecodeResult greedy_decode(const FusionModel& model, const FeatMatrix& frames,
                           const std::vector<real_t>& visual, std::size_t max_len);

void save_checkpoint(const FusionModel& model, const std::string& path);
FusionModel load_checkpoint(const std::string& path,
                            std::optional<FusionKind> expected_kind = std::nullopt);

// Snaps every parameter onto the 32-bit float grid so checkpoints (stored as
// f32) round-trip without changing the model. Called after init and after
// every optimizer step.
void quantize_parameters(FusionModel& model);

}  // namespace mmasr
