#include "mmasr/layers.hpp"

#include <cmath>
#include <string>

namespace mmasr {

namespace {

TensorPtr uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    auto t = Tensor::zeros(std::move(shape), true);
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t->data) v = static_cast<real_t>(rng.uniform(-k, k));
    return t;
}

inline real_t sigm(real_t v) {
    return v >= 0 ? real_t(1) / (real_t(1) + std::exp(-v)) : std::exp(v) / (real_t(1) + std::exp(v));
}

// y[0:rows) += W[row0:row0+rows) · x
void gemv_block(const Tensor& w, std::size_t row0, std::size_t rows, const real_t* x,
                real_t* y) {
    const std::size_t cols = w.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        const real_t* wrow = w.data.data() + (row0 + i) * cols;
        real_t acc = 0;
        for (std::size_t j = 0; j < cols; ++j) acc += wrow[j] * x[j];
        y[i] += acc;
    }
}

// dW[row0:row0+rows) += dpre ⊗ x
void outer_acc(Tensor& w, std::size_t row0, std::size_t rows, const real_t* dpre,
               const real_t* x) {
    const std::size_t cols = w.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        real_t* grow = w.grad.data() + (row0 + i) * cols;
        const real_t d = dpre[i];
        if (d == real_t(0)) continue;
        for (std::size_t j = 0; j < cols; ++j) grow[j] += d * x[j];
    }
}

// dx += W[row0:row0+rows)^T · dpre
void gemv_t_acc(const Tensor& w, std::size_t row0, std::size_t rows, const real_t* dpre,
                real_t* dx) {
    const std::size_t cols = w.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        const real_t* wrow = w.data.data() + (row0 + i) * cols;
        const real_t d = dpre[i];
        if (d == real_t(0)) continue;
        for (std::size_t j = 0; j < cols; ++j) dx[j] += d * wrow[j];
    }
}

void check_cell_dims(std::size_t gates, const TensorPtr& wx, const TensorPtr& wh,
                     const TensorPtr& b, const TensorPtr& x, const TensorPtr& h,
                     const char* what) {
    const std::size_t hidden = b->shape[0] / gates;
    if (b->shape[0] % gates != 0 || wx->rank() != 2 || wh->rank() != 2 ||
        wx->shape[0] != gates * hidden || wh->shape[0] != gates * hidden ||
        wh->shape[1] != hidden || x->rank() != 1 || x->shape[0] != wx->shape[1] ||
        h->rank() != 1 || h->shape[0] != hidden) {
        throw ShapeError(std::string(what) + " dimension mismatch: wx " + shape_str(wx->shape) +
                         ", wh " + shape_str(wh->shape) + ", x " + shape_str(x->shape) + ", h " +
                         shape_str(h->shape));
    }
}

}  // namespace

LstmCellParams LstmCellParams::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    LstmCellParams p;
    p.weight_x = uniform_init({4 * hidden, input_dim}, input_dim, rng);
    p.weight_h = uniform_init({4 * hidden, hidden}, hidden, rng);
    p.bias = Tensor::zeros({4 * hidden}, true);
    for (std::size_t i = hidden; i < 2 * hidden; ++i) p.bias->data[i] = real_t(1);
    return p;
}

GruCellParams GruCellParams::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    GruCellParams p;
    p.weight_x = uniform_init({3 * hidden, input_dim}, input_dim, rng);
    p.weight_h = uniform_init({3 * hidden, hidden}, hidden, rng);
    p.bias = Tensor::zeros({3 * hidden}, true);
    return p;
}

AttentionParams AttentionParams::init(std::size_t attn_dim, std::size_t item_dim,
                                      std::size_t query_dim, Rng& rng) {
    AttentionParams p;
    p.enc_proj = uniform_init({attn_dim, item_dim}, item_dim, rng);
    p.query_proj = uniform_init({attn_dim, query_dim}, query_dim, rng);
    p.score_v = uniform_init({attn_dim}, attn_dim, rng);
    return p;
}

LstmState lstm_step(Tape& tape, const LstmCellParams& params, const TensorPtr& x,
                    const LstmState& state) {
    check_cell_dims(4, params.weight_x, params.weight_h, params.bias, x, state.h, "lstm_step");
    if (state.c->shape != state.h->shape) {
        throw ShapeError("lstm_step state mismatch: h " + shape_str(state.h->shape) + ", c " +
                         shape_str(state.c->shape));
    }
    const std::size_t hid = params.hidden();
    const bool needs = tape.grad_enabled() &&
                       (x->requires_grad || state.h->requires_grad || state.c->requires_grad ||
                        params.weight_x->requires_grad);

    std::vector<real_t> pre(params.bias->data);
    gemv_block(*params.weight_x, 0, 4 * hid, x->data.data(), pre.data());
    gemv_block(*params.weight_h, 0, 4 * hid, state.h->data.data(), pre.data());

    std::vector<real_t> gi(hid), gf(hid), gg(hid), go(hid), tc(hid);
    auto h_out = Tensor::zeros({hid}, needs);
    auto c_out = Tensor::zeros({hid}, needs);
    for (std::size_t j = 0; j < hid; ++j) {
        gi[j] = sigm(pre[j]);
        gf[j] = sigm(pre[hid + j]);
        gg[j] = std::tanh(pre[2 * hid + j]);
        go[j] = sigm(pre[3 * hid + j]);
        c_out->data[j] = gf[j] * state.c->data[j] + gi[j] * gg[j];
        tc[j] = std::tanh(c_out->data[j]);
        h_out->data[j] = go[j] * tc[j];
    }

    if (needs) {
        auto wx = params.weight_x;
        auto wh = params.weight_h;
        auto b = params.bias;
        auto h_prev = state.h;
        auto c_prev = state.c;
        tape.record("lstm_step", {h_out, c_out},
                    [=, gi = std::move(gi), gf = std::move(gf), gg = std::move(gg),
                     go = std::move(go), tc = std::move(tc)] {
                        const std::size_t h = gi.size();
                        std::vector<real_t> dpre(4 * h);
                        for (std::size_t j = 0; j < h; ++j) {
                            const real_t dh = h_out->grad[j];
                            const real_t dc =
                                c_out->grad[j] + dh * go[j] * (real_t(1) - tc[j] * tc[j]);
                            const real_t di = dc * gg[j];
                            const real_t df = dc * c_prev->data[j];
                            const real_t dg = dc * gi[j];
                            const real_t dout = dh * tc[j];
                            dpre[j] = di * gi[j] * (real_t(1) - gi[j]);
                            dpre[h + j] = df * gf[j] * (real_t(1) - gf[j]);
                            dpre[2 * h + j] = dg * (real_t(1) - gg[j] * gg[j]);
                            dpre[3 * h + j] = dout * go[j] * (real_t(1) - go[j]);
                            if (c_prev->requires_grad) c_prev->grad[j] += dc * gf[j];
                        }
                        if (wx->requires_grad) outer_acc(*wx, 0, 4 * h, dpre.data(), x->data.data());
                        if (wh->requires_grad)
                            outer_acc(*wh, 0, 4 * h, dpre.data(), h_prev->data.data());
                        if (b->requires_grad)
                            for (std::size_t j = 0; j < 4 * h; ++j) b->grad[j] += dpre[j];
                        if (x->requires_grad) gemv_t_acc(*wx, 0, 4 * h, dpre.data(), x->grad.data());
                        if (h_prev->requires_grad)
                            gemv_t_acc(*wh, 0, 4 * h, dpre.data(), h_prev->grad.data());
                    });
    }
    return {h_out, c_out};
}

TensorPtr gru_step(Tape& tape, const GruCellParams& params, const TensorPtr& x,
                   const TensorPtr& h) {
    check_cell_dims(3, params.weight_x, params.weight_h, params.bias, x, h, "gru_step");
    const std::size_t hid = params.hidden();
    const bool needs = tape.grad_enabled() &&
                       (x->requires_grad || h->requires_grad || params.weight_x->requires_grad);

    std::vector<real_t> pre(params.bias->data);
    gemv_block(*params.weight_x, 0, 3 * hid, x->data.data(), pre.data());
    gemv_block(*params.weight_h, 0, 2 * hid, h->data.data(), pre.data());

    std::vector<real_t> gr(hid), gu(hid), gn(hid), rh(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        gr[j] = sigm(pre[j]);
        gu[j] = sigm(pre[hid + j]);
        rh[j] = gr[j] * h->data[j];
    }
    gemv_block(*params.weight_h, 2 * hid, hid, rh.data(), pre.data() + 2 * hid);

    auto h_out = Tensor::zeros({hid}, needs);
    for (std::size_t j = 0; j < hid; ++j) {
        gn[j] = std::tanh(pre[2 * hid + j]);
        h_out->data[j] = gu[j] * h->data[j] + (real_t(1) - gu[j]) * gn[j];
    }

    if (needs) {
        auto wx = params.weight_x;
        auto wh = params.weight_h;
        auto b = params.bias;
        tape.record("gru_step", h_out,
                    [=, gr = std::move(gr), gu = std::move(gu), gn = std::move(gn),
                     rh = std::move(rh)] {
                        const std::size_t hd = gr.size();
                        std::vector<real_t> dpre(3 * hd), drh(hd, real_t(0));
                        for (std::size_t j = 0; j < hd; ++j) {
                            const real_t dh = h_out->grad[j];
                            const real_t dn = dh * (real_t(1) - gu[j]);
                            const real_t du = dh * (h->data[j] - gn[j]);
                            dpre[2 * hd + j] = dn * (real_t(1) - gn[j] * gn[j]);
                            dpre[hd + j] = du * gu[j] * (real_t(1) - gu[j]);
                            if (h->requires_grad) h->grad[j] += dh * gu[j];
                        }
                        gemv_t_acc(*wh, 2 * hd, hd, dpre.data() + 2 * hd, drh.data());
                        for (std::size_t j = 0; j < hd; ++j) {
                            const real_t dr = drh[j] * h->data[j];
                            dpre[j] = dr * gr[j] * (real_t(1) - gr[j]);
                            if (h->requires_grad) h->grad[j] += drh[j] * gr[j];
                        }
                        if (wx->requires_grad) outer_acc(*wx, 0, 3 * hd, dpre.data(), x->data.data());
                        if (wh->requires_grad) {
                            outer_acc(*wh, 0, 2 * hd, dpre.data(), h->data.data());
                            outer_acc(*wh, 2 * hd, hd, dpre.data() + 2 * hd, rh.data());
                        }
                        if (b->requires_grad)
                            for (std::size_t j = 0; j < 3 * hd; ++j) b->grad[j] += dpre[j];
                        if (x->requires_grad) gemv_t_acc(*wx, 0, 3 * hd, dpre.data(), x->grad.data());
                        if (h->requires_grad) gemv_t_acc(*wh, 0, 2 * hd, dpre.data(), h->grad.data());
                    });
    }
    return h_out;
}

BiLstmLayer BiLstmLayer::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    return {LstmCellParams::init(input_dim, hidden, rng),
            LstmCellParams::init(input_dim, hidden, rng)};
}

std::vector<TensorPtr> BiLstmLayer::parameters() const {
    std::vector<TensorPtr> out = forward.parameters();
    auto b = backward.parameters();
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

TensorPtr bilstm_encoder(Tape& tape, const std::vector<BiLstmLayer>& layers,
                         const TensorPtr& frames, const std::set<std::size_t>& subsample_layers) {
    return bilstm_encoder(tape, layers, frames, subsample_layers, frames->rows());
}

TensorPtr bilstm_encoder(Tape& tape, const std::vector<BiLstmLayer>& layers,
                         const TensorPtr& frames, const std::set<std::size_t>& subsample_layers,
                         std::size_t n_valid) {
    if (layers.empty()) throw InputError("bilstm_encoder needs at least one layer");
    if (frames->rank() != 2 || n_valid > frames->rows()) {
        throw ShapeError("bilstm_encoder frames " + shape_str(frames->shape) + ", n_valid " +
                         std::to_string(n_valid));
    }
    std::size_t n_subsample = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) n_subsample += subsample_layers.count(l);
    if (n_valid < (std::size_t(1) << n_subsample)) {
        throw InputError("input length " + std::to_string(n_valid) + " too short for " +
                         std::to_string(n_subsample) + " subsampling layers");
    }

    std::vector<TensorPtr> steps;
    steps.reserve(n_valid);
    for (std::size_t t = 0; t < n_valid; ++t) steps.push_back(row(tape, frames, t));

    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::size_t hid = layer.forward.hidden();
        const std::size_t T = steps.size();

        std::vector<TensorPtr> fwd(T), bwd(T);
        LstmState state{Tensor::zeros({hid}), Tensor::zeros({hid})};
        for (std::size_t t = 0; t < T; ++t) {
            state = lstm_step(tape, layer.forward, steps[t], state);
            fwd[t] = state.h;
        }
        state = {Tensor::zeros({hid}), Tensor::zeros({hid})};
        for (std::size_t t = T; t-- > 0;) {
            state = lstm_step(tape, layer.backward, steps[t], state);
            bwd[t] = state.h;
        }

        std::vector<TensorPtr> combined(T);
        for (std::size_t t = 0; t < T; ++t) combined[t] = concat(tape, fwd[t], bwd[t]);

        if (subsample_layers.count(l)) {
            std::vector<TensorPtr> kept;
            kept.reserve((T + 1) / 2);
            for (std::size_t t = 0; t < T; t += 2) kept.push_back(combined[t]);
            steps = std::move(kept);
        } else {
            steps = std::move(combined);
        }
    }
    return stack_rows(tape, steps);
}

AttentionResult mlp_attention(Tape& tape, const AttentionParams& params, const TensorPtr& items,
                              const TensorPtr& query) {
    if (items->rank() != 2 || items->rows() == 0) {
        throw InputError("mlp_attention needs at least one item, got " + shape_str(items->shape));
    }
    auto proj = matmul_nt(tape, items, params.enc_proj);  // [n x a]
    auto qp = matvec(tape, params.query_proj, query);     // [a]
    auto act = tanh(tape, add(tape, proj, qp));
    auto scores = matvec(tape, act, params.score_v);      // [n]
    auto weights = softmax(tape, scores);
    auto context = vecmat(tape, weights, items);
    return {context, weights};
}

}  // namespace mmasr
