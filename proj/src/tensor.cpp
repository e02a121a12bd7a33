#include "bix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bix/gemm.hpp"

namespace bix {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

static void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int64_t e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    validate_shape(shape);
    auto d = std::make_shared<TensorData>();
    d->values.assign(static_cast<size_t>(shape_numel(shape)), value);
    d->shape = std::move(shape);
    Tensor t(std::move(d));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<real> values,
                           bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    Tensor t(std::move(d));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::scalar(real value) { return from_values({1}, {value}); }

void Tensor::set_requires_grad(bool on) {
    if (on) {
        d_->requires_grad = true;
        d_->is_leaf = true;
        d_->grad.assign(d_->values.size(), 0.0);
    } else {
        d_->requires_grad = false;
        d_->is_leaf = false;
        d_->grad.clear();
    }
}

std::vector<real>& Tensor::grad() {
    if (!d_->requires_grad) throw ContractError("tensor has no grad buffer");
    return d_->grad;
}

const std::vector<real>& Tensor::grad() const {
    if (!d_->requires_grad) throw ContractError("tensor has no grad buffer");
    return d_->grad;
}

void Tensor::zero_grad() {
    if (d_->requires_grad) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

real Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
}

Tensor Tensor::detach_copy() const {
    return Tensor::from_values(d_->shape, d_->values);
}

Tensor make_op_output(Shape shape, bool track) {
    auto d = std::make_shared<TensorData>();
    d->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    d->shape = std::move(shape);
    if (track) {
        d->requires_grad = true;
        d->is_leaf = false;
        d->grad.assign(d->values.size(), 0.0);
    }
    return Tensor(std::move(d));
}

void check_finite(const Tensor& t, const char* what) {
    for (real v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + what);
        }
    }
}

// ---- tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::record(const Tensor& out, std::function<void()> fn) {
    nodes_.push_back(std::move(fn));
    outputs_.push_back(out);
    output_set_.insert(out.raw());
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss");
    }
    if (!contains(loss)) {
        throw ContractError("loss tensor is not an output of this tape");
    }
    for (Tensor& out : outputs_) {
        if (!out.is_leaf()) out.zero_grad();
    }
    loss.raw()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::clear() {
    nodes_.clear();
    outputs_.clear();
    output_set_.clear();
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

// Returns whether the output should carry grad, and records fn if so.
static bool track_and_record(std::initializer_list<const Tensor*> ins) {
    if (!g_active_tape) return false;
    for (const Tensor* t : ins) {
        if ((*t).requires_grad()) return true;
    }
    return false;
}

static void record_node(const Tensor& out, std::function<void()> fn) {
    g_active_tape->record(out, std::move(fn));
}

// ---- elementwise ----

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    bool track = track_and_record({&a, &b});
    Tensor out = make_op_output(a.shape(), track);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    check_finite(out, "add");
    if (track) {
        record_node(out, [a, b, out]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.raw()->grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.raw()->grad;
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    bool track = track_and_record({&a, &b});
    Tensor out = make_op_output(a.shape(), track);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    check_finite(out, "sub");
    if (track) {
        record_node(out, [a, b, out]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.raw()->grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.raw()->grad;
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    bool track = track_and_record({&a, &b});
    Tensor out = make_op_output(a.shape(), track);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    check_finite(out, "mul");
    if (track) {
        record_node(out, [a, b, out]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.raw()->grad;
                const auto& bv2 = b.values();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.raw()->grad;
                const auto& av2 = a.values();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, real c) {
    bool track = track_and_record({&a});
    Tensor out = make_op_output(a.shape(), track);
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    check_finite(out, "scale");
    if (track) {
        record_node(out, [a, out, c]() {
            const auto& g = out.grad();
            auto& ga = a.raw()->grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    bool track = track_and_record({&a});
    Tensor out = make_op_output(a.shape(), track);
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0 ? av[i] : 0;
    check_finite(out, "relu");
    if (track) {
        // subgradient at 0 is 0
        record_node(out, [a, out]() {
            const auto& g = out.grad();
            const auto& o = out.values();
            auto& ga = a.raw()->grad;
            for (size_t i = 0; i < g.size(); ++i) {
                if (o[i] > 0) ga[i] += g[i];
            }
        });
    }
    return out;
}

Tensor mean_reduce(const Tensor& a) {
    bool track = track_and_record({&a});
    Tensor out = make_op_output({1}, track);
    const auto& av = a.values();
    real acc = 0;
    for (real v : av) acc += v;
    const real inv = real(1) / static_cast<real>(av.size());
    out.values()[0] = acc * inv;
    check_finite(out, "mean_reduce");
    if (track) {
        record_node(out, [a, out, inv]() {
            const real g = out.grad()[0] * inv;
            auto& ga = a.raw()->grad;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

Tensor apply_elementwise(Elementwise kind, const std::vector<Tensor>& operands,
                         real c) {
    auto need = [&](size_t n) {
        if (operands.size() != n) {
            throw ContractError("apply_elementwise: expected " + std::to_string(n) +
                                " operands, got " + std::to_string(operands.size()));
        }
    };
    switch (kind) {
        case Elementwise::add: need(2); return add(operands[0], operands[1]);
        case Elementwise::sub: need(2); return sub(operands[0], operands[1]);
        case Elementwise::mul: need(2); return mul(operands[0], operands[1]);
        case Elementwise::scale: need(1); return scale(operands[0], c);
        case Elementwise::relu: need(1); return relu(operands[0]);
        case Elementwise::mean_reduce: need(1); return mean_reduce(operands[0]);
    }
    throw ContractError("apply_elementwise: unknown kind");
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ShapeError("matmul expects 2-D operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul inner extents disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    bool track = track_and_record({&a, &b});
    Tensor out = make_op_output({m, n}, track);
    gemm_nn(m, k, n, a.values().data(), b.values().data(), out.values().data(), false);
    check_finite(out, "matmul");
    if (track) {
        record_node(out, [a, b, out, m, k, n]() {
            const real* g = out.grad().data();
            if (a.requires_grad()) {
                // dA += G * B^T
                gemm_nt(m, n, k, g, b.values().data(), a.raw()->grad.data(), true);
            }
            if (b.requires_grad()) {
                // dB += A^T * G
                gemm_tn(k, m, n, a.values().data(), g, b.raw()->grad.data(), true);
            }
        });
    }
    return out;
}

// ---- gumbel softmax ----

Tensor gumbel_softmax(const Tensor& logits, real temperature, bool hard,
                      GumbelRng& rng) {
    if (temperature <= 0) {
        throw DomainError("gumbel_softmax temperature must be positive");
    }
    if (logits.ndim() != 2) {
        throw ShapeError("gumbel_softmax expects [N x K] logits, got " +
                         shape_str(logits.shape()));
    }
    const int64_t n = logits.dim(0), k = logits.dim(1);
    bool track = track_and_record({&logits});
    Tensor out = make_op_output({n, k}, track);

    // soft columns are needed for the straight-through backward
    std::vector<real> soft(static_cast<size_t>(n * k));
    const auto& lv = logits.values();
    for (int64_t j = 0; j < k; ++j) {
        real mx = -std::numeric_limits<real>::infinity();
        for (int64_t i = 0; i < n; ++i) {
            real z = (lv[i * k + j] + static_cast<real>(rng.sample())) / temperature;
            soft[i * k + j] = z;
            mx = std::max(mx, z);
        }
        real denom = 0;
        for (int64_t i = 0; i < n; ++i) {
            real e = std::exp(soft[i * k + j] - mx);
            soft[i * k + j] = e;
            denom += e;
        }
        int64_t arg = 0;
        real best = -1;
        for (int64_t i = 0; i < n; ++i) {
            soft[i * k + j] /= denom;
            if (soft[i * k + j] > best) {
                best = soft[i * k + j];
                arg = i;
            }
        }
        for (int64_t i = 0; i < n; ++i) {
            out.values()[i * k + j] =
                hard ? (i == arg ? real(1) : real(0)) : soft[i * k + j];
        }
    }
    check_finite(out, "gumbel_softmax");
    if (track) {
        record_node(out, [logits, out, soft = std::move(soft), n, k, temperature]() {
            // straight-through: gradient of the soft column in both modes
            const auto& g = out.grad();
            auto& gl = logits.raw()->grad;
            for (int64_t j = 0; j < k; ++j) {
                real dot = 0;
                for (int64_t i = 0; i < n; ++i) dot += g[i * k + j] * soft[i * k + j];
                for (int64_t i = 0; i < n; ++i) {
                    gl[i * k + j] +=
                        soft[i * k + j] * (g[i * k + j] - dot) / temperature;
                }
            }
        });
    }
    return out;
}

// ---- grad check ----

real grad_check(const std::function<Tensor(const Tensor&)>& f,
                const Tensor& input, real eps) {
    if (eps <= 0) throw DomainError("grad_check eps must be positive");
    Tensor x = input.detach_copy();
    x.set_requires_grad(true);

    Tape tape;
    std::vector<real> analytic;
    {
        TapeScope scope(tape);
        Tensor y = f(x);
        if (y.numel() != 1) throw ContractError("grad_check requires scalar-valued f");
        // f may not depend on x at all; the analytic gradient is then zero
        if (y.requires_grad() && tape.contains(y)) tape.backward(y);
        analytic = x.grad();
    }

    real max_err = 0;
    for (size_t i = 0; i < x.values().size(); ++i) {
        const real saved = x.values()[i];
        x.values()[i] = saved + eps;
        const real up = f(x).item();
        x.values()[i] = saved - eps;
        const real dn = f(x).item();
        x.values()[i] = saved;
        const real cd = (up - dn) / (2 * eps);
        if (!std::isfinite(cd)) throw NumericError("grad_check: non-finite finite-difference");
        const real err = std::abs(analytic[i] - cd) / std::max(real(1), std::abs(cd));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace bix
