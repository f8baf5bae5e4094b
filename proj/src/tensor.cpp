#include "mmasr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace mmasr {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

// matrix ⊕ row vector: b broadcast over the rows of a
bool row_broadcast(const Tensor& a, const Tensor& b) {
    return a.rank() == 2 && b.rank() == 1 && a.shape[1] == b.shape[0];
}

TensorPtr make_out(Tape& tape, std::vector<std::size_t> shape, bool inputs_need_grad) {
    auto t = Tensor::zeros(std::move(shape), tape.grad_enabled() && inputs_need_grad);
    return t;
}

}  // namespace

TensorPtr Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(shape_numel(t->shape), real_t(0));
    t->requires_grad = requires_grad;
    if (requires_grad) t->grad.assign(t->data.size(), real_t(0));
    return t;
}

TensorPtr Tensor::full(std::vector<std::size_t> shape, real_t value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::from(std::vector<std::size_t> shape, std::vector<real_t> values,
                       bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->grad.assign(t->data.size(), real_t(0));
    return t;
}

TensorPtr Tensor::scalar(real_t value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_str(shape));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_str(shape));
    return shape[1];
}

void Tensor::zero_grad() {
    if (requires_grad) std::fill(grad.begin(), grad.end(), real_t(0));
}

void Tensor::ensure_grad() {
    requires_grad = true;
    if (grad.size() != data.size()) grad.assign(data.size(), real_t(0));
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void Tape::record(const char* op, TensorPtr out, std::function<void()> backward) {
    if (!grad_enabled_) return;
    nodes_.push_back(Node{op, {std::move(out)}, std::move(backward)});
}

void Tape::record(const char* op, std::vector<TensorPtr> outs, std::function<void()> backward) {
    if (!grad_enabled_) return;
    nodes_.push_back(Node{op, std::move(outs), std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(loss->shape));
    }
    if (nodes_.empty()) {
        throw ContractError("backward on an empty tape");
    }
    if (!loss->requires_grad) {
        throw ContractError("backward on a loss that does not require grad");
    }
    for (auto& node : nodes_)
        for (auto& out : node.outs) out->zero_grad();
    loss->grad[0] += real_t(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

// ---- ops --------------------------------------------------------------------

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_out(tape, {m, n}, a->requires_grad || b->requires_grad);
    const real_t* pa = a->data.data();
    const real_t* pb = b->data.data();
    real_t* po = out->data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const real_t av = pa[i * k + kk];
            const real_t* brow = pb + kk * n;
            real_t* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (out->requires_grad) {
        tape.record("matmul", out, [a, b, out, m, k, n] {
            const real_t* g = out->grad.data();
            if (a->requires_grad) {
                real_t* ga = a->grad.data();
                const real_t* pb = b->data.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        real_t acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[kk * n + j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (b->requires_grad) {
                real_t* gb = b->grad.data();
                const real_t* pa = a->data.data();
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t i = 0; i < m; ++i) {
                        const real_t av = pa[i * k + kk];
                        for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += av * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

TensorPtr matmul_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[1]) {
        throw ShapeError("matmul_nt shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    auto out = make_out(tape, {m, n}, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            real_t acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a->data[i * k + kk] * b->data[j * k + kk];
            out->data[i * n + j] = acc;
        }
    if (out->requires_grad) {
        tape.record("matmul_nt", out, [a, b, out, m, k, n] {
            const real_t* g = out->grad.data();
            if (a->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const real_t gv = g[i * n + j];
                        for (std::size_t kk = 0; kk < k; ++kk)
                            a->grad[i * k + kk] += gv * b->data[j * k + kk];
                    }
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const real_t gv = g[i * n + j];
                        for (std::size_t kk = 0; kk < k; ++kk)
                            b->grad[j * k + kk] += gv * a->data[i * k + kk];
                    }
            }
        });
    }
    return out;
}

TensorPtr matvec(Tape& tape, const TensorPtr& a, const TensorPtr& x) {
    if (a->rank() != 2 || x->rank() != 1 || a->shape[1] != x->shape[0]) {
        throw ShapeError("matvec shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(x->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1];
    auto out = make_out(tape, {m}, a->requires_grad || x->requires_grad);
    for (std::size_t i = 0; i < m; ++i) {
        real_t acc = 0;
        const real_t* arow = a->data.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) acc += arow[j] * x->data[j];
        out->data[i] = acc;
    }
    if (out->requires_grad) {
        tape.record("matvec", out, [a, x, out, m, k] {
            for (std::size_t i = 0; i < m; ++i) {
                const real_t gv = out->grad[i];
                if (gv == real_t(0)) continue;
                if (a->requires_grad) {
                    real_t* garow = a->grad.data() + i * k;
                    for (std::size_t j = 0; j < k; ++j) garow[j] += gv * x->data[j];
                }
                if (x->requires_grad) {
                    const real_t* arow = a->data.data() + i * k;
                    for (std::size_t j = 0; j < k; ++j) x->grad[j] += gv * arow[j];
                }
            }
        });
    }
    return out;
}

TensorPtr vecmat(Tape& tape, const TensorPtr& w, const TensorPtr& a) {
    if (w->rank() != 1 || a->rank() != 2 || w->shape[0] != a->shape[0]) {
        throw ShapeError("vecmat shape mismatch: " + shape_str(w->shape) + " vs " +
                         shape_str(a->shape));
    }
    const std::size_t n = a->shape[0], e = a->shape[1];
    auto out = make_out(tape, {e}, w->requires_grad || a->requires_grad);
    for (std::size_t i = 0; i < n; ++i) {
        const real_t wv = w->data[i];
        const real_t* arow = a->data.data() + i * e;
        for (std::size_t j = 0; j < e; ++j) out->data[j] += wv * arow[j];
    }
    if (out->requires_grad) {
        tape.record("vecmat", out, [w, a, out, n, e] {
            const real_t* g = out->grad.data();
            for (std::size_t i = 0; i < n; ++i) {
                if (w->requires_grad) {
                    real_t acc = 0;
                    const real_t* arow = a->data.data() + i * e;
                    for (std::size_t j = 0; j < e; ++j) acc += g[j] * arow[j];
                    w->grad[i] += acc;
                }
                if (a->requires_grad) {
                    const real_t wv = w->data[i];
                    real_t* garow = a->grad.data() + i * e;
                    for (std::size_t j = 0; j < e; ++j) garow[j] += wv * g[j];
                }
            }
        });
    }
    return out;
}

namespace {

enum class BinOp { Add, Sub, Mul };

TensorPtr binary_op(Tape& tape, const TensorPtr& a, const TensorPtr& b, BinOp op,
                    const char* name) {
    const bool exact = same_shape(*a, *b);
    const bool bcast = !exact && row_broadcast(*a, *b);
    if (!exact && !bcast) {
        throw ShapeError(std::string(name) + " shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    auto out = make_out(tape, a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->numel();
    const std::size_t bc = bcast ? b->shape[0] : 0;
    for (std::size_t i = 0; i < n; ++i) {
        const real_t bv = bcast ? b->data[i % bc] : b->data[i];
        switch (op) {
            case BinOp::Add: out->data[i] = a->data[i] + bv; break;
            case BinOp::Sub: out->data[i] = a->data[i] - bv; break;
            case BinOp::Mul: out->data[i] = a->data[i] * bv; break;
        }
    }
    if (out->requires_grad) {
        tape.record(name, out, [a, b, out, op, bcast, bc, n] {
            const real_t* g = out->grad.data();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t bi = bcast ? i % bc : i;
                switch (op) {
                    case BinOp::Add:
                        if (a->requires_grad) a->grad[i] += g[i];
                        if (b->requires_grad) b->grad[bi] += g[i];
                        break;
                    case BinOp::Sub:
                        if (a->requires_grad) a->grad[i] += g[i];
                        if (b->requires_grad) b->grad[bi] -= g[i];
                        break;
                    case BinOp::Mul:
                        if (a->requires_grad) a->grad[i] += g[i] * (bcast ? b->data[bi] : b->data[i]);
                        if (b->requires_grad) b->grad[bi] += g[i] * a->data[i];
                        break;
                }
            }
        });
    }
    return out;
}

}  // namespace

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    return binary_op(tape, a, b, BinOp::Add, "add");
}
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    return binary_op(tape, a, b, BinOp::Sub, "sub");
}
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    return binary_op(tape, a, b, BinOp::Mul, "mul");
}

TensorPtr tanh(Tape& tape, const TensorPtr& x) {
    auto out = make_out(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->numel(); ++i) out->data[i] = std::tanh(x->data[i]);
    if (out->requires_grad) {
        tape.record("tanh", out, [x, out] {
            for (std::size_t i = 0; i < x->numel(); ++i)
                x->grad[i] += out->grad[i] * (real_t(1) - out->data[i] * out->data[i]);
        });
    }
    return out;
}

TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
    auto out = make_out(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->numel(); ++i) {
        const real_t v = x->data[i];
        out->data[i] = v >= 0 ? real_t(1) / (real_t(1) + std::exp(-v))
                              : std::exp(v) / (real_t(1) + std::exp(v));
    }
    if (out->requires_grad) {
        tape.record("sigmoid", out, [x, out] {
            for (std::size_t i = 0; i < x->numel(); ++i)
                x->grad[i] += out->grad[i] * out->data[i] * (real_t(1) - out->data[i]);
        });
    }
    return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& s, const TensorPtr& x) {
    if (!s->is_scalar()) {
        throw ShapeError("scale expects a scalar first argument, got " + shape_str(s->shape));
    }
    auto out = make_out(tape, x->shape, s->requires_grad || x->requires_grad);
    const real_t sv = s->data[0];
    for (std::size_t i = 0; i < x->numel(); ++i) out->data[i] = sv * x->data[i];
    if (out->requires_grad) {
        tape.record("scale", out, [s, x, out] {
            if (x->requires_grad) {
                for (std::size_t i = 0; i < x->numel(); ++i)
                    x->grad[i] += out->grad[i] * s->data[0];
            }
            if (s->requires_grad) {
                real_t acc = 0;
                for (std::size_t i = 0; i < x->numel(); ++i) acc += out->grad[i] * x->data[i];
                s->grad[0] += acc;
            }
        });
    }
    return out;
}

TensorPtr cmul(Tape& tape, const TensorPtr& x, real_t c) {
    auto out = make_out(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->numel(); ++i) out->data[i] = c * x->data[i];
    if (out->requires_grad) {
        tape.record("cmul", out, [x, out, c] {
            for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += c * out->grad[i];
        });
    }
    return out;
}

namespace {

void softmax_row(const real_t* in, real_t* out, std::size_t n) {
    real_t mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    real_t denom = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        denom += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
}

}  // namespace

TensorPtr softmax(Tape& tape, const TensorPtr& x, std::size_t axis) {
    const bool vec = x->rank() == 1 && axis == 0;
    const bool mat = x->rank() == 2 && axis == 1;
    if (!vec && !mat) {
        throw ShapeError("softmax unsupported shape/axis: " + shape_str(x->shape) + " axis " +
                         std::to_string(axis));
    }
    const std::size_t nrows = vec ? 1 : x->shape[0];
    const std::size_t n = vec ? x->shape[0] : x->shape[1];
    if (n == 0) throw ShapeError("softmax over an empty axis: " + shape_str(x->shape));
    auto out = make_out(tape, x->shape, x->requires_grad);
    for (std::size_t r = 0; r < nrows; ++r)
        softmax_row(x->data.data() + r * n, out->data.data() + r * n, n);
    if (out->requires_grad) {
        tape.record("softmax", out, [x, out, nrows, n] {
            // dx = y ⊙ (g − <g, y>) per row
            for (std::size_t r = 0; r < nrows; ++r) {
                const real_t* y = out->data.data() + r * n;
                const real_t* g = out->grad.data() + r * n;
                real_t gy = 0;
                for (std::size_t i = 0; i < n; ++i) gy += g[i] * y[i];
                real_t* gx = x->grad.data() + r * n;
                for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - gy);
            }
        });
    }
    return out;
}

TensorPtr concat(Tape& tape, const TensorPtr& a, const TensorPtr& b, std::size_t axis) {
    std::vector<std::size_t> shape;
    if (a->rank() == 1 && b->rank() == 1 && axis == 0) {
        shape = {a->shape[0] + b->shape[0]};
    } else if (a->rank() == 2 && b->rank() == 2 && axis == 0 && a->shape[1] == b->shape[1]) {
        shape = {a->shape[0] + b->shape[0], a->shape[1]};
    } else if (a->rank() == 2 && b->rank() == 2 && axis == 1 && a->shape[0] == b->shape[0]) {
        shape = {a->shape[0], a->shape[1] + b->shape[1]};
    } else {
        throw ShapeError("concat shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape) + " axis " + std::to_string(axis));
    }
    auto out = make_out(tape, shape, a->requires_grad || b->requires_grad);
    if (axis == 0 || a->rank() == 1) {
        std::copy(a->data.begin(), a->data.end(), out->data.begin());
        std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->numel());
    } else {
        const std::size_t r = shape[0], ca = a->shape[1], cb = b->shape[1];
        for (std::size_t i = 0; i < r; ++i) {
            std::copy_n(a->data.begin() + i * ca, ca, out->data.begin() + i * (ca + cb));
            std::copy_n(b->data.begin() + i * cb, cb, out->data.begin() + i * (ca + cb) + ca);
        }
    }
    if (out->requires_grad) {
        tape.record("concat", out, [a, b, out, axis] {
            if (axis == 0 || a->rank() == 1) {
                if (a->requires_grad)
                    for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < b->numel(); ++i)
                        b->grad[i] += out->grad[a->numel() + i];
            } else {
                const std::size_t r = out->shape[0], ca = a->shape[1], cb = b->shape[1];
                for (std::size_t i = 0; i < r; ++i) {
                    if (a->requires_grad)
                        for (std::size_t j = 0; j < ca; ++j)
                            a->grad[i * ca + j] += out->grad[i * (ca + cb) + j];
                    if (b->requires_grad)
                        for (std::size_t j = 0; j < cb; ++j)
                            b->grad[i * cb + j] += out->grad[i * (ca + cb) + ca + j];
                }
            }
        });
    }
    return out;
}

TensorPtr stack_rows(Tape& tape, const std::vector<TensorPtr>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows with no rows");
    const std::size_t e = rows[0]->numel();
    bool needs = false;
    for (const auto& r : rows) {
        if (r->rank() != 1 || r->shape[0] != e) {
            throw ShapeError("stack_rows row shape mismatch: " + shape_str(r->shape));
        }
        needs = needs || r->requires_grad;
    }
    auto out = make_out(tape, {rows.size(), e}, needs);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i]->data.begin(), rows[i]->data.end(), out->data.begin() + i * e);
    if (out->requires_grad) {
        tape.record("stack_rows", out, [rows, out, e] {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (!rows[i]->requires_grad) continue;
                for (std::size_t j = 0; j < e; ++j) rows[i]->grad[j] += out->grad[i * e + j];
            }
        });
    }
    return out;
}

TensorPtr row(Tape& tape, const TensorPtr& m, std::size_t index) {
    if (m->rank() != 2 || index >= m->shape[0]) {
        throw ShapeError("row " + std::to_string(index) + " out of range for " +
                         shape_str(m->shape));
    }
    const std::size_t c = m->shape[1];
    auto out = make_out(tape, {c}, m->requires_grad);
    std::copy_n(m->data.begin() + index * c, c, out->data.begin());
    if (out->requires_grad) {
        tape.record("row", out, [m, out, index, c] {
            for (std::size_t j = 0; j < c; ++j) m->grad[index * c + j] += out->grad[j];
        });
    }
    return out;
}

TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != x->numel()) {
        throw ShapeError("reshape " + shape_str(x->shape) + " to incompatible " +
                         shape_str(shape));
    }
    auto out = make_out(tape, shape, x->requires_grad);
    out->data = x->data;
    if (out->requires_grad) {
        tape.record("reshape", out, [x, out] {
            for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr dot(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 1 || b->rank() != 1 || a->shape[0] != b->shape[0]) {
        throw ShapeError("dot shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    auto out = make_out(tape, {1}, a->requires_grad || b->requires_grad);
    real_t acc = 0;
    for (std::size_t i = 0; i < a->numel(); ++i) acc += a->data[i] * b->data[i];
    out->data[0] = acc;
    if (out->requires_grad) {
        tape.record("dot", out, [a, b, out] {
            const real_t g = out->grad[0];
            if (a->requires_grad)
                for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += g * b->data[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < b->numel(); ++i) b->grad[i] += g * a->data[i];
        });
    }
    return out;
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
    auto out = make_out(tape, {1}, x->requires_grad);
    real_t acc = 0;
    for (real_t v : x->data) acc += v;
    out->data[0] = acc;
    if (out->requires_grad) {
        tape.record("sum", out, [x, out] {
            const real_t g = out->grad[0];
            for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

TensorPtr pick(Tape& tape, const TensorPtr& x, std::size_t index) {
    if (index >= x->numel()) {
        throw ShapeError("pick index " + std::to_string(index) + " out of range for " +
                         shape_str(x->shape));
    }
    auto out = make_out(tape, {1}, x->requires_grad);
    out->data[0] = x->data[index];
    if (out->requires_grad) {
        tape.record("pick", out, [x, out, index] { x->grad[index] += out->grad[0]; });
    }
    return out;
}

TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits, std::size_t target) {
    if (logits->rank() != 1) {
        throw ShapeError("cross_entropy expects a logits vector, got " + shape_str(logits->shape));
    }
    if (target >= logits->shape[0]) {
        throw InputError("cross_entropy target " + std::to_string(target) +
                         " out of range for " + shape_str(logits->shape));
    }
    const std::size_t n = logits->shape[0];
    real_t mx = logits->data[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits->data[i]);
    real_t denom = 0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(logits->data[i] - mx);
    const real_t lse = mx + std::log(denom);
    auto out = make_out(tape, {1}, logits->requires_grad);
    out->data[0] = lse - logits->data[target];
    if (out->requires_grad) {
        tape.record("cross_entropy", out, [logits, out, target, mx, denom, n] {
            const real_t g = out->grad[0];
            for (std::size_t i = 0; i < n; ++i) {
                const real_t p = std::exp(logits->data[i] - mx) / denom;
                logits->grad[i] += g * (p - (i == target ? real_t(1) : real_t(0)));
            }
        });
    }
    return out;
}

// ---- gradient checking ------------------------------------------------------

GradCheckReport grad_check(const std::function<TensorPtr(Tape&)>& fn,
                           std::span<const TensorPtr> params, double eps, double tol) {
    auto eval = [&fn]() -> double {
        Tape tape(false);
        auto out = fn(tape);
        if (!out->is_scalar()) {
            throw ContractError("grad_check function must be scalar-valued, got " +
                                shape_str(out->shape));
        }
        return static_cast<double>(out->data[0]);
    };
    const double v0 = eval();
    const double v1 = eval();
    if (std::memcmp(&v0, &v1, sizeof(double)) != 0) {
        throw ContractError("grad_check function is not deterministic");
    }

    for (const auto& p : params) p->zero_grad();
    std::vector<std::vector<real_t>> analytic;
    {
        Tape tape(true);
        auto loss = fn(tape);
        if (loss->requires_grad) {
            tape.backward(loss);
        }
        for (const auto& p : params) {
            analytic.push_back(p->requires_grad ? p->grad
                                                : std::vector<real_t>(p->numel(), real_t(0)));
        }
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const real_t saved = p->data[i];
            p->data[i] = saved + static_cast<real_t>(eps);
            const double fp = eval();
            p->data[i] = saved - static_cast<real_t>(eps);
            const double fm = eval();
            p->data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][i]);
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
            const double rel = std::fabs(a - numeric) / denom;
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace mmasr
