#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmasr/layers.hpp"

using namespace mmasr;

namespace {

TensorPtr random_vec(Rng& rng, std::size_t n, bool requires_grad = false) {
    auto t = Tensor::zeros({n}, requires_grad);
    for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
    return t;
}

TensorPtr random_mat(Rng& rng, std::size_t r, std::size_t c, bool requires_grad = false) {
    auto t = Tensor::zeros({r, c}, requires_grad);
    for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
    return t;
}

std::vector<TensorPtr> collect(std::initializer_list<std::vector<TensorPtr>> groups) {
    std::vector<TensorPtr> all;
    for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
    return all;
}

}  // namespace

TEST_CASE("lstm_step closed form at zero weights") {
    Rng rng(1);
    auto p = LstmCellParams::init(3, 4, rng);
    std::fill(p.weight_x->data.begin(), p.weight_x->data.end(), 0.0);
    std::fill(p.weight_h->data.begin(), p.weight_h->data.end(), 0.0);
    // biases already zero except the forget block (= 1)

    Tape tape;
    auto x = Tensor::zeros({3});
    auto c0 = Tensor::from({4}, {0.5, -0.3, 1.0, 0.0});
    auto h0 = Tensor::zeros({4});
    auto out = lstm_step(tape, p, x, {h0, c0});
    const double f = 1.0 / (1.0 + std::exp(-1.0));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(out.c->data[j] == doctest::Approx(f * c0->data[j]));
        CHECK(out.h->data[j] == doctest::Approx(0.5 * std::tanh(f * c0->data[j])));
    }

    // all-zero biases, zero inputs and state -> zero output
    std::fill(p.bias->data.begin(), p.bias->data.end(), 0.0);
    auto out2 = lstm_step(tape, p, x, {Tensor::zeros({4}), Tensor::zeros({4})});
    for (auto v : out2.h->data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("lstm_step dimension mismatch") {
    Rng rng(2);
    auto p = LstmCellParams::init(3, 4, rng);
    Tape tape;
    CHECK_THROWS_AS(lstm_step(tape, p, Tensor::zeros({5}),
                              {Tensor::zeros({4}), Tensor::zeros({4})}),
                    ShapeError);
}

TEST_CASE("gru_step carry-through and zero cases") {
    Rng rng(3);
    auto p = GruCellParams::init(3, 4, rng);
    // large update-gate bias: h' ~= h
    for (std::size_t j = 4; j < 8; ++j) p.bias->data[j] = 50.0;
    Tape tape;
    auto x = random_vec(rng, 3);
    auto h = random_vec(rng, 4);
    auto out = gru_step(tape, p, x, h);
    for (std::size_t j = 0; j < 4; ++j) CHECK(out->data[j] == doctest::Approx(h->data[j]).epsilon(1e-9));

    auto pz = GruCellParams::init(3, 4, rng);
    std::fill(pz.weight_x->data.begin(), pz.weight_x->data.end(), 0.0);
    std::fill(pz.weight_h->data.begin(), pz.weight_h->data.end(), 0.0);
    auto out2 = gru_step(tape, pz, Tensor::zeros({3}), Tensor::zeros({4}));
    for (auto v : out2->data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("recurrent cells pass grad_check over 100 random draws") {
    for (int draw = 0; draw < 100; ++draw) {
        Rng rng(1000 + draw);
        auto lp = LstmCellParams::init(3, 4, rng);
        auto gp = GruCellParams::init(4, 3, rng);
        auto x = random_vec(rng, 3, true);
        auto h0 = random_vec(rng, 4, true);
        auto c0 = random_vec(rng, 4, true);
        auto gh = random_vec(rng, 3, true);
        auto params = collect({lp.parameters(), gp.parameters(), {x, h0, c0, gh}});
        auto report = grad_check(
            [&](Tape& t) {
                auto s = lstm_step(t, lp, x, {h0, c0});
                auto h2 = gru_step(t, gp, s.h, gh);
                return add(t, sum(t, h2), sum(t, s.c));
            },
            params);
        CHECK(report.pass);
    }
}

TEST_CASE("bilstm_encoder subsampling arithmetic") {
    Rng rng(5);
    std::vector<BiLstmLayer> layers{BiLstmLayer::init(2, 3, rng), BiLstmLayer::init(6, 3, rng),
                                    BiLstmLayer::init(6, 3, rng)};
    std::set<std::size_t> sub{1, 2};
    Tape tape;
    auto frames16 = random_mat(rng, 16, 2);
    CHECK(bilstm_encoder(tape, layers, frames16, sub)->shape ==
          std::vector<std::size_t>{4, 6});

    auto frames5 = random_mat(rng, 5, 2);
    CHECK(bilstm_encoder(tape, layers, frames5, sub)->shape == std::vector<std::size_t>{2, 6});

    auto frames3 = random_mat(rng, 3, 2);
    CHECK_THROWS_AS(bilstm_encoder(tape, layers, frames3, sub), InputError);
}

TEST_CASE("bilstm_encoder is bidirectional: last frame reaches position 0") {
    Rng rng(6);
    std::vector<BiLstmLayer> layers{BiLstmLayer::init(2, 3, rng), BiLstmLayer::init(6, 3, rng)};
    auto frames = random_mat(rng, 8, 2);
    Tape tape;
    auto e1 = bilstm_encoder(tape, layers, frames, {});
    frames->data[frames->numel() - 1] += 0.5;  // perturb x_T
    auto e2 = bilstm_encoder(tape, layers, frames, {});
    double delta = 0;
    for (std::size_t j = 0; j < e1->cols(); ++j) delta += std::fabs(e1->at(0, j) - e2->at(0, j));
    CHECK(delta > 1e-8);
}

TEST_CASE("bilstm_encoder gradients") {
    Rng rng(7);
    std::vector<BiLstmLayer> layers{BiLstmLayer::init(2, 2, rng), BiLstmLayer::init(4, 2, rng)};
    auto frames = random_mat(rng, 6, 2, true);
    auto params = collect({layers[0].parameters(), layers[1].parameters(), {frames}});
    auto report = grad_check(
        [&](Tape& t) { return sum(t, tanh(t, bilstm_encoder(t, layers, frames, {0}))); }, params);
    CHECK(report.pass);
}

TEST_CASE("mlp_attention singleton and symmetry") {
    Rng rng(8);
    auto p = AttentionParams::init(5, 4, 3, rng);
    auto query = random_vec(rng, 3);
    Tape tape;

    auto single = random_mat(rng, 1, 4);
    auto r1 = mlp_attention(tape, p, single, query);
    CHECK(r1.weights->data[0] == doctest::Approx(1.0));
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(r1.context->data[j] == doctest::Approx(single->data[j]));

    auto common = random_vec(rng, 4);
    auto same = Tensor::zeros({3, 4});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) same->at(i, j) = common->data[j];
    auto r2 = mlp_attention(tape, p, same, query);
    for (auto w : r2.weights->data) CHECK(w == doctest::Approx(1.0 / 3));
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(r2.context->data[j] == doctest::Approx(common->data[j]));

    CHECK_THROWS_AS(mlp_attention(tape, p, Tensor::zeros({0, 4}), query), InputError);
}

TEST_CASE("mlp_attention matches brute-force evaluation") {
    Rng rng(9);
    auto p = AttentionParams::init(5, 4, 3, rng);
    auto items = random_mat(rng, 3, 4);
    auto query = random_vec(rng, 3);
    Tape tape;
    auto r = mlp_attention(tape, p, items, query);

    // direct evaluation
    std::vector<double> scores(3);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0;
        for (std::size_t a = 0; a < 5; ++a) {
            double pre = 0;
            for (std::size_t j = 0; j < 4; ++j) pre += p.enc_proj->at(a, j) * items->at(i, j);
            for (std::size_t j = 0; j < 3; ++j) pre += p.query_proj->at(a, j) * query->data[j];
            s += p.score_v->data[a] * std::tanh(pre);
        }
        scores[i] = s;
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double denom = 0;
    for (double s : scores) denom += std::exp(s - mx);
    double wsum = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double w = std::exp(scores[i] - mx) / denom;
        CHECK(r.weights->data[i] == doctest::Approx(w).epsilon(1e-10));
        wsum += w;
    }
    CHECK(wsum == doctest::Approx(1.0));

    std::vector<double> ctx(4, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) ctx[j] += r.weights->data[i] * items->at(i, j);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(r.context->data[j] == doctest::Approx(ctx[j]).epsilon(1e-10));
}

TEST_CASE("mlp_attention weights form a distribution and are permutation-equivariant") {
    Rng rng(10);
    for (int trial = 0; trial < 25; ++trial) {
        auto p = AttentionParams::init(4, 3, 2, rng);
        const std::size_t n = 2 + rng.uniform_index(5);
        auto items = random_mat(rng, n, 3);
        auto query = random_vec(rng, 2);
        Tape tape;
        auto r = mlp_attention(tape, p, items, query);

        double total = 0;
        for (auto w : r.weights->data) {
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(std::fabs(total - 1.0) < 1e-6);

        // reverse the item order
        auto rev = Tensor::zeros({n, 3});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < 3; ++j) rev->at(i, j) = items->at(n - 1 - i, j);
        auto r2 = mlp_attention(tape, p, rev, query);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::fabs(r2.weights->data[i] - r.weights->data[n - 1 - i]) < 1e-9);
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(std::fabs(r2.context->data[j] - r.context->data[j]) < 1e-9);
    }
}

TEST_CASE("mlp_attention gradients") {
    Rng rng(11);
    auto p = AttentionParams::init(4, 3, 2, rng);
    auto items = random_mat(rng, 5, 3, true);
    auto query = random_vec(rng, 2, true);
    auto params = collect({p.parameters(), {items, query}});
    auto report = grad_check(
        [&](Tape& t) {
            auto r = mlp_attention(t, p, items, query);
            return add(t, sum(t, tanh(t, r.context)), dot(t, r.weights, r.weights));
        },
        params);
    CHECK(report.pass);
}
