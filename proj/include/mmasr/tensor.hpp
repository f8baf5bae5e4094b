#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmasr/common.hpp"

namespace mmasr {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor (rank 1 or 2 in practice). Gradient buffer has the
// same extent as data and starts zeroed.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<real_t> data;
    bool requires_grad = false;
    std::vector<real_t> grad;

    static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<std::size_t> shape, real_t value, bool requires_grad = false);
    static TensorPtr from(std::vector<std::size_t> shape, std::vector<real_t> values,
                          bool requires_grad = false);
    static TensorPtr scalar(real_t value, bool requires_grad = false);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return numel() == 1; }

    real_t& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    real_t at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void zero_grad();
    void ensure_grad();
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Records every differentiable op in creation order; backward() replays the
// records strictly in reverse. One tape per forward pass, discarded after use.
// A tape and its tensors belong to a single thread.
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    void record(const char* op, TensorPtr out, std::function<void()> backward);
    // For fused ops with several outputs (e.g. recurrent cells).
    void record(const char* op, std::vector<TensorPtr> outs, std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable leaf
    // gradient. Tape-created intermediates are re-zeroed at entry, so calling
    // twice doubles leaf gradients while intermediates stay exact.
    void backward(const TensorPtr& loss);

  private:
    struct Node {
        const char* op;
        std::vector<TensorPtr> outs;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_;
};

// ---- differentiable ops ----------------------------------------------------

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
// a[m×k] · b[n×k]^T -> [m×n]
TensorPtr matmul_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b);
// A[m×k] · x[k] -> [m]
TensorPtr matvec(Tape& tape, const TensorPtr& a, const TensorPtr& x);
// w[n] · A[n×e] -> [e]
TensorPtr vecmat(Tape& tape, const TensorPtr& w, const TensorPtr& a);

// Elementwise binary ops; identical shapes, or matrix ⊕ row vector.
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

TensorPtr tanh(Tape& tape, const TensorPtr& x);
TensorPtr sigmoid(Tape& tape, const TensorPtr& x);

// Multiply by a scalar tensor (shape {1}); gradients flow to both arguments.
TensorPtr scale(Tape& tape, const TensorPtr& s, const TensorPtr& x);
// Multiply by a plain constant.
TensorPtr cmul(Tape& tape, const TensorPtr& x, real_t c);

// Numerically stable softmax. Rank 1: axis must be 0. Rank 2: axis 1 (rows).
TensorPtr softmax(Tape& tape, const TensorPtr& x, std::size_t axis = 0);

TensorPtr concat(Tape& tape, const TensorPtr& a, const TensorPtr& b, std::size_t axis = 0);
TensorPtr stack_rows(Tape& tape, const std::vector<TensorPtr>& rows);
TensorPtr row(Tape& tape, const TensorPtr& m, std::size_t index);
TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<std::size_t> shape);

TensorPtr dot(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sum(Tape& tape, const TensorPtr& x);
TensorPtr pick(Tape& tape, const TensorPtr& x, std::size_t index);

// -log softmax(logits)[target]; backward is softmax(logits) - onehot(target).
TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits, std::size_t target);

// ---- gradient checking ------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::size_t checked = 0;
};

// Compares analytic gradients of a deterministic scalar function against
// central finite differences over every element of `params`. Evaluates the
// function twice up front; a bitwise mismatch raises ContractError.
GradCheckReport grad_check(const std::function<TensorPtr(Tape&)>& fn,
                           std::span<const TensorPtr> params, double eps = 1e-5,
                           double tol = 1e-4);

}  // namespace mmasr
