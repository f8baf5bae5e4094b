#pragma once

#include <set>
#include <vector>

#include "mmasr/tensor.hpp"

namespace mmasr {

// Gate blocks are stored row-contiguous in a fixed order:
//   LSTM: input, forget, cell, output   (forget bias initialized to 1)
//   GRU:  reset, update, candidate      (update = 1 carries the old state)
struct LstmCellParams {
    TensorPtr weight_x;  // [4h x d]
    TensorPtr weight_h;  // [4h x h]
    TensorPtr bias;      // [4h]

    std::size_t hidden() const { return bias->shape[0] / 4; }
    std::size_t input_dim() const { return weight_x->shape[1]; }

    static LstmCellParams init(std::size_t input_dim, std::size_t hidden, Rng& rng);
    std::vector<TensorPtr> parameters() const { return {weight_x, weight_h, bias}; }
};

struct GruCellParams {
    TensorPtr weight_x;  // [3h x d]
    TensorPtr weight_h;  // [3h x h]
    TensorPtr bias;      // [3h]

    std::size_t hidden() const { return bias->shape[0] / 3; }
    std::size_t input_dim() const { return weight_x->shape[1]; }

    static GruCellParams init(std::size_t input_dim, std::size_t hidden, Rng& rng);
    std::vector<TensorPtr> parameters() const { return {weight_x, weight_h, bias}; }
};

struct AttentionParams {
    TensorPtr enc_proj;    // [a x e]
    TensorPtr query_proj;  // [a x q]
    TensorPtr score_v;     // [a]

    static AttentionParams init(std::size_t attn_dim, std::size_t item_dim,
                                std::size_t query_dim, Rng& rng);
    std::vector<TensorPtr> parameters() const { return {enc_proj, query_proj, score_v}; }
};

struct LstmState {
    TensorPtr h;
    TensorPtr c;
};

// Single fused cell steps; backward is hand-written and covered by grad_check.
LstmState lstm_step(Tape& tape, const LstmCellParams& params, const TensorPtr& x,
                    const LstmState& state);
TensorPtr gru_step(Tape& tape, const GruCellParams& params, const TensorPtr& x,
                   const TensorPtr& h);

struct BiLstmLayer {
    LstmCellParams forward;
    LstmCellParams backward;

    static BiLstmLayer init(std::size_t input_dim, std::size_t hidden, Rng& rng);
    std::vector<TensorPtr> parameters() const;
};

// Stacked bidirectional encoder. Each timestep of the output concatenates the
// forward and backward hidden states. After every layer whose index is in
// subsample_layers, even-indexed timesteps (0, 2, 4, ...) are kept, so each
// such layer shortens the sequence to ceil(T/2). Processes only the first
// n_valid rows of frames; pass n_valid = rows to use the whole input.
TensorPtr bilstm_encoder(Tape& tape, const std::vector<BiLstmLayer>& layers,
                         const TensorPtr& frames, const std::set<std::size_t>& subsample_layers,
                         std::size_t n_valid);
TensorPtr bilstm_encoder(Tape& tape, const std::vector<BiLstmLayer>& layers,
                         const TensorPtr& frames, const std::set<std::size_t>& subsample_layers);

struct AttentionResult {
    TensorPtr context;  // [e]
    TensorPtr weights;  // [n], softmax-normalized
};

// Additive attention: score_i = v . tanh(W_e item_i + W_q query).
AttentionResult mlp_attention(Tape& tape, const AttentionParams& params, const TensorPtr& items,
                              const TensorPtr& query);

}  // namespace mmasr
