#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "bix/errors.hpp"
#include "bix/rng.hpp"

namespace bix {

// Scalar type of all tensor payloads. 64-bit by default; configure with
// -DENGINE_REAL32=ON for a faster 32-bit build (tests assume 64-bit).
#ifdef ENGINE_REAL32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<real> values;
    std::vector<real> grad;  // same length as values iff requires_grad
    bool requires_grad = false;
    bool is_leaf = false;
};

// Shared-ownership handle to a dense tensor. Copying a Tensor aliases the
// underlying storage; weight sharing across graph sites is expressed by
// passing the same handle to several ops.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<real> values,
                              bool requires_grad = false);
    static Tensor scalar(real value);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int64_t dim(size_t i) const { return d_->shape[i]; }
    size_t ndim() const { return d_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }

    std::vector<real>& values() { return d_->values; }
    const std::vector<real>& values() const { return d_->values; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool on);  // marks the tensor as a leaf parameter
    bool is_leaf() const { return d_->is_leaf; }

    std::vector<real>& grad();
    const std::vector<real>& grad() const;
    void zero_grad();

    real item() const;

    // Value-only copy (fresh storage, no grad, no history).
    Tensor detach_copy() const;

    TensorData* raw() const { return d_.get(); }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;

    friend class Tape;
    friend Tensor make_op_output(Shape shape, bool track);
};

// Recorded reverse-mode program. Nodes are appended in execution order, so the
// vector itself is the topological order and backward is a reverse replay.
class Tape {
public:
    // fn reads out.grad and accumulates into the operands' grads.
    void record(const Tensor& out, std::function<void()> fn);

    // Seeds d(loss)/d(loss) = 1 and replays every node once, in reverse.
    // Leaf gradients accumulate; intermediate gradients are reset per call, so
    // calling backward twice doubles every leaf gradient.
    void backward(const Tensor& loss);

    size_t size() const { return nodes_.size(); }
    bool contains(const Tensor& t) const {
        return output_set_.count(t.raw()) != 0;
    }
    void clear();

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<Tensor> outputs_;
    std::unordered_set<const TensorData*> output_set_;
};

void backward(Tape& tape, const Tensor& loss);

// Active-tape scope. Ops record onto the innermost active tape; with no tape
// active they run as pure (ungraded) forward computations.
Tape* active_tape();
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// ---- elementwise and reduction ops ----

enum class Elementwise { add, sub, mul, scale, relu, mean_reduce };

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);
Tensor relu(const Tensor& a);
Tensor mean_reduce(const Tensor& a);  // -> scalar

// Generic dispatcher; `c` is consulted only for Elementwise::scale.
Tensor apply_elementwise(Elementwise kind, const std::vector<Tensor>& operands,
                         real c = 0.0);

// ---- linear algebra ----

// a[m x k] * b[k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- stochastic selection ----

// Column-wise tempered softmax of `logits` [N x K] with per-entry Gumbel
// noise. hard=true snaps each column to a one-hot in the forward pass and
// routes the gradient through the soft column (straight-through).
Tensor gumbel_softmax(const Tensor& logits, real temperature, bool hard,
                      GumbelRng& rng);

// ---- verification ----

// Max over coordinates of |analytic - central_diff| / max(1, |central_diff|)
// for a scalar-valued function of one tensor.
real grad_check(const std::function<Tensor(const Tensor&)>& f,
                const Tensor& input, real eps);

// Throws NumericError if any entry is NaN/Inf. Every op calls this on its
// output; exposed for oracles and hooks.
void check_finite(const Tensor& t, const char* what);

// Internal: allocate an op output; `track` marks it as requiring grad
// propagation (non-leaf).
Tensor make_op_output(Shape shape, bool track);

}  // namespace bix
