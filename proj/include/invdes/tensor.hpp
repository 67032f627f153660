#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "invdes/error.hpp"

namespace invdes {

using Index = Eigen::Index;

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using RowMajorMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<Index>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Tensor: dense n-d array of scalars with row-major flat storage.
//
// A Tensor is a cheap handle to shared storage. Values are immutable once an
// op has produced them; the two sanctioned mutations are gradient
// accumulation during backward() and parameter updates by the optimizer
// (mutable_values). Gradients live next to the values and are lazily
// allocated, zero-initialized.
// ---------------------------------------------------------------------------
template <class S>
class Tensor {
    struct Impl {
        std::vector<Index> shape;
        ArrayX<S> values;
        ArrayX<S> grad;  // size 0 until first touched
        bool requires_grad = false;
        bool grad_path = false;  // participates in a recorded graph
    };

public:
    Tensor() = default;

    Tensor(std::vector<Index> shape, ArrayX<S> values, bool requires_grad = false)
        : impl_(std::make_shared<Impl>()) {
        if (shape_size(shape) != values.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        for (Index d : shape)
            if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->values = std::move(values);
        impl_->requires_grad = requires_grad;
        if (requires_grad) ensure_grad();
    }

    static Tensor zeros(std::vector<Index> shape, bool requires_grad = false) {
        ArrayX<S> v = ArrayX<S>::Zero(shape_size(shape));
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(std::vector<Index> shape, S value, bool requires_grad = false) {
        ArrayX<S> v = ArrayX<S>::Constant(shape_size(shape), value);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(S value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    static Tensor from(std::vector<Index> shape, std::initializer_list<S> values,
                       bool requires_grad = false) {
        ArrayX<S> v(static_cast<Index>(values.size()));
        Index i = 0;
        for (S x : values) v[i++] = x;
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<Index>& shape() const { return impl_->shape; }
    Index rank() const { return static_cast<Index>(impl_->shape.size()); }
    Index dim(Index i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    Index size() const { return impl_->values.size(); }

    const ArrayX<S>& values() const { return impl_->values; }
    /// Raw write access; reserved for the optimizer and running-stat updates.
    ArrayX<S>& mutable_values() { return impl_->values; }

    bool requires_grad() const { return impl_->requires_grad; }
    bool grad_path() const { return impl_->grad_path || impl_->requires_grad; }
    void mark_grad_path() { impl_->grad_path = true; }

    bool has_grad() const { return impl_->grad.size() == impl_->values.size(); }
    ArrayX<S>& grad() {
        ensure_grad();
        return impl_->grad;
    }
    const ArrayX<S>& grad() const {
        if (!has_grad()) throw Error("tensor: gradient was never populated");
        return impl_->grad;
    }
    void ensure_grad() {
        if (impl_->grad.size() != impl_->values.size())
            impl_->grad = ArrayX<S>::Zero(impl_->values.size());
    }
    void zero_grad() {
        if (has_grad()) impl_->grad.setZero();
    }

    S value() const {
        if (size() != 1) throw ShapeError("tensor: value() on non-scalar " + shape_str(shape()));
        return impl_->values[0];
    }

    S at(Index i) const { return impl_->values[i]; }

    /// Same storage identity (used by the tape to track graph nodes).
    bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

    /// Copy that shares nothing and carries no gradient history.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = impl_->shape;
        t.impl_->values = impl_->values;
        return t;
    }

private:
    std::shared_ptr<Impl> impl_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// ---------------------------------------------------------------------------
// Tape: ordered record of differentiable operations.
//
// Ops append their backward rule as they execute, so the record is in
// topological order by construction. backward() replays the rules in reverse
// exactly once; a second pass without reset() is an error.
// ---------------------------------------------------------------------------
template <class S>
class Tape {
public:
    void record(std::function<void()> backward_rule) {
        nodes_.push_back(std::move(backward_rule));
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

    template <class T>
    friend void backward(Tape<T>& tape, const Tensor<T>& loss);

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

/// Runs reverse-mode accumulation from a scalar loss through the tape.
/// Accumulates dLoss/dX into every grad-path tensor's grad and consumes the
/// tape.
template <class S>
void backward(Tape<S>& tape, const Tensor<S>& loss) {
    if (tape.consumed_) throw Error("tape: backward called on a consumed tape; reset() first");
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    tape.consumed_ = true;
    const_cast<Tensor<S>&>(loss).grad()[0] += S(1);
    for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) (*it)();
    tape.nodes_.clear();
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------
namespace detail {

/// Keeps glibc from returning large blocks to the kernel between ops;
/// training loops allocate same-sized tensors every step and the remap/fault
/// cycle otherwise dominates the step time. Idempotent.
void tune_allocator();

template <class S>
inline void check_finite(const ArrayX<S>& v, const char* op) {
    if (!v.isFinite().all()) throw NumericError(std::string(op) + ": non-finite output");
}

template <class S>
inline Tensor<S> make_output(std::vector<Index> shape, ArrayX<S> values, Tape<S>* tape,
                             bool any_input_grad, const char* op) {
    check_finite(values, op);
    Tensor<S> out(std::move(shape), std::move(values));
    if (tape != nullptr && any_input_grad) out.mark_grad_path();
    return out;
}

// Sum of an array accumulated in double. Reductions accumulate in 64-bit so
// float-storage losses stay accurate enough for finite-difference checks.
template <class S>
inline double dsum(const ArrayX<S>& v) {
    return v.template cast<double>().sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------
enum class EltKind {
    // unary
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Elu,
    Exp,
    LogClamped,
    Abs,
    Neg,
    // binary (second operand required; equal shape or size-1 scalar)
    Add,
    Sub,
    Mul,
};

inline const char* elt_name(EltKind k) {
    switch (k) {
        case EltKind::Relu: return "relu";
        case EltKind::LeakyRelu: return "leaky_relu";
        case EltKind::Tanh: return "tanh";
        case EltKind::Sigmoid: return "sigmoid";
        case EltKind::Elu: return "elu";
        case EltKind::Exp: return "exp";
        case EltKind::LogClamped: return "log";
        case EltKind::Abs: return "abs";
        case EltKind::Neg: return "neg";
        case EltKind::Add: return "add";
        case EltKind::Sub: return "sub";
        case EltKind::Mul: return "mul";
    }
    return "?";
}

inline bool elt_is_binary(EltKind k) {
    return k == EltKind::Add || k == EltKind::Sub || k == EltKind::Mul;
}

/// Elementwise op over one tensor, or two tensors of equal shape (the second
/// may also be a broadcastable size-1 scalar). `param` is the leaky slope,
/// the ELU alpha, or the log clamp floor, depending on the kind.
template <class S>
Tensor<S> elementwise(EltKind kind, const Tensor<S>& a, std::type_identity_t<const Tensor<S>*> b = nullptr,
                      std::type_identity_t<Tape<S>*> tape = nullptr, S param = S(0)) {
    const ArrayX<S>& x = a.values();
    ArrayX<S> y;
    bool b_scalar = false;

    if (elt_is_binary(kind)) {
        if (b == nullptr) throw ShapeError(std::string(elt_name(kind)) + ": missing second operand");
        b_scalar = (b->size() == 1 && a.size() != 1);
        if (!b_scalar && b->shape() != a.shape())
            throw ShapeError(std::string(elt_name(kind)) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b->shape()));
    }

    switch (kind) {
        case EltKind::Relu: y = x.max(S(0)); break;
        case EltKind::LeakyRelu: y = (x > S(0)).select(x, param * x); break;
        case EltKind::Tanh: y = x.tanh(); break;
        case EltKind::Sigmoid: y = S(1) / (S(1) + (-x).exp()); break;
        case EltKind::Elu: y = (x > S(0)).select(x, param * (x.exp() - S(1))); break;
        case EltKind::Exp: y = x.exp(); break;
        case EltKind::LogClamped: y = x.max(param).log(); break;
        case EltKind::Abs: y = x.abs(); break;
        case EltKind::Neg: y = -x; break;
        case EltKind::Add: y = b_scalar ? (x + b->values()[0]).eval() : (x + b->values()).eval(); break;
        case EltKind::Sub: y = b_scalar ? (x - b->values()[0]).eval() : (x - b->values()).eval(); break;
        case EltKind::Mul: y = b_scalar ? (x * b->values()[0]).eval() : (x * b->values()).eval(); break;
    }

    bool needs = a.grad_path() || (b != nullptr && b->grad_path());
    Tensor<S> out = detail::make_output(a.shape(), std::move(y), tape, needs, elt_name(kind));
    if (tape == nullptr || !needs) return out;

    Tensor<S> a_cap = a;
    Tensor<S> b_cap = b ? *b : Tensor<S>();
    Tensor<S> out_cap = out;
    tape->record([kind, a_cap, b_cap, out_cap, b_scalar, param]() mutable {
        const ArrayX<S>& g = out_cap.grad();
        const ArrayX<S>& x = a_cap.values();
        const ArrayX<S>& y = out_cap.values();
        if (elt_is_binary(kind)) {
            if (a_cap.grad_path()) {
                switch (kind) {
                    case EltKind::Add:
                    case EltKind::Sub: a_cap.grad() += g; break;
                    case EltKind::Mul:
                        a_cap.grad() += b_scalar ? (g * b_cap.values()[0]).eval()
                                                 : (g * b_cap.values()).eval();
                        break;
                    default: break;
                }
            }
            if (b_cap.defined() && b_cap.grad_path()) {
                ArrayX<S> gb;
                switch (kind) {
                    case EltKind::Add: gb = g; break;
                    case EltKind::Sub: gb = -g; break;
                    case EltKind::Mul: gb = g * x; break;
                    default: break;
                }
                if (b_scalar)
                    b_cap.grad()[0] += static_cast<S>(detail::dsum(gb));
                else
                    b_cap.grad() += gb;
            }
            return;
        }
        if (!a_cap.grad_path()) return;
        switch (kind) {
            case EltKind::Relu: a_cap.grad() += (x > S(0)).select(g, S(0)); break;
            case EltKind::LeakyRelu: a_cap.grad() += (x > S(0)).select(g, param * g); break;
            case EltKind::Tanh: a_cap.grad() += g * (S(1) - y * y); break;
            case EltKind::Sigmoid: a_cap.grad() += g * y * (S(1) - y); break;
            case EltKind::Elu: a_cap.grad() += (x > S(0)).select(g, g * (y + param)); break;
            case EltKind::Exp: a_cap.grad() += g * y; break;
            case EltKind::LogClamped: a_cap.grad() += (x > param).select(g / x, S(0)); break;
            case EltKind::Abs: a_cap.grad() += g * x.sign(); break;
            case EltKind::Neg: a_cap.grad() -= g; break;
            default: break;
        }
    });
    return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Relu, x, nullptr, tape);
}
template <class S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::LeakyRelu, x, nullptr, tape, slope);
}
template <class S>
Tensor<S> tanh(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Tanh, x, nullptr, tape);
}
template <class S>
Tensor<S> sigmoid(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Sigmoid, x, nullptr, tape);
}
template <class S>
Tensor<S> elu(const Tensor<S>& x, S alpha = S(1), std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Elu, x, nullptr, tape, alpha);
}
template <class S>
Tensor<S> exp(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Exp, x, nullptr, tape);
}
template <class S>
Tensor<S> log_clamped(const Tensor<S>& x, S floor, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::LogClamped, x, nullptr, tape, floor);
}
template <class S>
Tensor<S> abs(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Abs, x, nullptr, tape);
}
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Add, a, &b, tape);
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Sub, a, &b, tape);
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr) {
    return elementwise(EltKind::Mul, a, &b, tape);
}

/// y = scale * x + shift, elementwise with constant coefficients.
template <class S>
Tensor<S> affine(const Tensor<S>& x, S scale, S shift, std::type_identity_t<Tape<S>*> tape = nullptr) {
    ArrayX<S> y = scale * x.values() + shift;
    Tensor<S> out = detail::make_output(x.shape(), std::move(y), tape, x.grad_path(), "affine");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, scale]() mutable { x_cap.grad() += scale * out_cap.grad(); });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> sum(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    ArrayX<S> y(1);
    y[0] = static_cast<S>(detail::dsum(x.values()));
    Tensor<S> out = detail::make_output<S>({1}, std::move(y), tape, x.grad_path(), "sum");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap]() mutable { x_cap.grad() += out_cap.grad()[0]; });
    }
    return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    const S inv_n = S(1) / static_cast<S>(x.size());
    ArrayX<S> y(1);
    y[0] = static_cast<S>(detail::dsum(x.values()) / static_cast<double>(x.size()));
    Tensor<S> out = detail::make_output<S>({1}, std::move(y), tape, x.grad_path(), "mean");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, inv_n]() mutable { x_cap.grad() += inv_n * out_cap.grad()[0]; });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------
namespace detail {

template <class S>
inline Eigen::Map<const RowMajorMat<S>> mat_view(const Tensor<S>& t) {
    return Eigen::Map<const RowMajorMat<S>>(t.values().data(), t.dim(0), t.dim(1));
}

template <class S>
inline Eigen::Map<RowMajorMat<S>> grad_view(Tensor<S>& t) {
    return Eigen::Map<RowMajorMat<S>>(t.grad().data(), t.dim(0), t.dim(1));
}

}  // namespace detail

/// Matrix product of rank-2 tensors, with optional operand transposes.
/// Gradients: for C = A.B, dA = dC.B^T and dB = A^T.dC (transpose cases
/// handled accordingly).
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr,
                 bool trans_a = false, bool trans_b = false) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const Index m = trans_a ? a.dim(1) : a.dim(0);
    const Index ka = trans_a ? a.dim(0) : a.dim(1);
    const Index kb = trans_b ? b.dim(1) : b.dim(0);
    const Index n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

    auto A = detail::mat_view(a);
    auto B = detail::mat_view(b);
    ArrayX<S> y(m * n);
    Eigen::Map<RowMajorMat<S>> C(y.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();

    bool needs = a.grad_path() || b.grad_path();
    Tensor<S> out = detail::make_output<S>({m, n}, std::move(y), tape, needs, "matmul");
    if (tape == nullptr || !needs) return out;

    Tensor<S> a_cap = a, b_cap = b, out_cap = out;
    tape->record([a_cap, b_cap, out_cap, trans_a, trans_b]() mutable {
        auto A = detail::mat_view(a_cap);
        auto B = detail::mat_view(b_cap);
        Eigen::Map<const RowMajorMat<S>> G(out_cap.grad().data(), out_cap.dim(0), out_cap.dim(1));
        if (a_cap.grad_path()) {
            auto dA = detail::grad_view(a_cap);
            if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b) dA.noalias() += G * B;
            else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
        }
        if (b_cap.grad_path()) {
            auto dB = detail::grad_view(b_cap);
            if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
            else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
            else if (trans_a && !trans_b) dB.noalias() += A * G;
            else dB.noalias() += G.transpose() * A.transpose();
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

/// Copying reshape that keeps the gradient flowing (identity backward).
template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<Index> new_shape, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (shape_size(new_shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    ArrayX<S> y = x.values();
    Tensor<S> out = detail::make_output(std::move(new_shape), std::move(y), tape, x.grad_path(), "reshape");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap]() mutable { x_cap.grad() += out_cap.grad(); });
    }
    return out;
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const Index rows = parts[0].dim(0);
    Index cols = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.dim(1);
        needs = needs || p.grad_path();
    }
    ArrayX<S> y(rows * cols);
    Index off = 0;
    for (const auto& p : parts) {
        const Index pc = p.dim(1);
        for (Index r = 0; r < rows; ++r)
            y.segment(r * cols + off, pc) = p.values().segment(r * pc, pc);
        off += pc;
    }
    Tensor<S> out = detail::make_output<S>({rows, cols}, std::move(y), tape, needs, "concat_cols");
    if (tape && needs) {
        std::vector<Tensor<S>> caps = parts;
        Tensor<S> out_cap = out;
        tape->record([caps, out_cap, rows, cols]() mutable {
            Index off = 0;
            for (auto& p : caps) {
                const Index pc = p.dim(1);
                if (p.grad_path()) {
                    for (Index r = 0; r < rows; ++r)
                        p.grad().segment(r * pc, pc) += out_cap.grad().segment(r * cols + off, pc);
                }
                off += pc;
            }
        });
    }
    return out;
}

/// Column slice [start, start+len) of a rank-2 tensor.
template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, Index start, Index len, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (x.rank() != 2 || start < 0 || len <= 0 || start + len > x.dim(1))
        throw ShapeError("slice_cols: bad slice [" + std::to_string(start) + ", +" +
                         std::to_string(len) + ") of " + shape_str(x.shape()));
    const Index rows = x.dim(0), cols = x.dim(1);
    ArrayX<S> y(rows * len);
    for (Index r = 0; r < rows; ++r) y.segment(r * len, len) = x.values().segment(r * cols + start, len);
    Tensor<S> out = detail::make_output<S>({rows, len}, std::move(y), tape, x.grad_path(), "slice_cols");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, start, len, rows, cols]() mutable {
            for (Index r = 0; r < rows; ++r)
                x_cap.grad().segment(r * cols + start, len) += out_cap.grad().segment(r * len, len);
        });
    }
    return out;
}

/// Concatenation along axis 0 (contiguous row blocks in flat storage).
template <class S>
Tensor<S> concat_axis0(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (a.rank() != b.rank()) throw ShapeError("concat_axis0: rank mismatch");
    for (Index d = 1; d < a.rank(); ++d)
        if (a.dim(d) != b.dim(d))
            throw ShapeError("concat_axis0: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Index> shape = a.shape();
    shape[0] = a.dim(0) + b.dim(0);
    ArrayX<S> y(a.size() + b.size());
    y.head(a.size()) = a.values();
    y.tail(b.size()) = b.values();
    bool needs = a.grad_path() || b.grad_path();
    Tensor<S> out = detail::make_output(std::move(shape), std::move(y), tape, needs, "concat_axis0");
    if (tape && needs) {
        Tensor<S> a_cap = a, b_cap = b, out_cap = out;
        tape->record([a_cap, b_cap, out_cap]() mutable {
            if (a_cap.grad_path()) a_cap.grad() += out_cap.grad().head(a_cap.size());
            if (b_cap.grad_path()) b_cap.grad() += out_cap.grad().tail(b_cap.size());
        });
    }
    return out;
}

/// Slice of [start, start+len) along axis 0 (contiguous in flat storage).
template <class S>
Tensor<S> slice_axis0(const Tensor<S>& x, Index start, Index len, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (start < 0 || len <= 0 || start + len > x.dim(0))
        throw ShapeError("slice_axis0: bad slice of " + shape_str(x.shape()));
    const Index block = x.size() / x.dim(0);
    std::vector<Index> shape = x.shape();
    shape[0] = len;
    ArrayX<S> y = x.values().segment(start * block, len * block);
    Tensor<S> out = detail::make_output(std::move(shape), std::move(y), tape, x.grad_path(), "slice_axis0");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, start, block]() mutable {
            x_cap.grad().segment(start * block, out_cap.size()) += out_cap.grad();
        });
    }
    return out;
}

/// Extracts image `i` of a rank-4 [N,C,H,W] tensor as a rank-2 [C, H*W] tensor.
template <class S>
Tensor<S> select_image(const Tensor<S>& x, Index i, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("select_image: expected rank-4, got " + shape_str(x.shape()));
    const Index C = x.dim(1), chw = x.dim(1) * x.dim(2) * x.dim(3);
    if (i < 0 || i >= x.dim(0)) throw ShapeError("select_image: index out of range");
    ArrayX<S> y = x.values().segment(i * chw, chw);
    Tensor<S> out = detail::make_output<S>({C, chw / C}, std::move(y), tape, x.grad_path(), "select_image");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, i, chw]() mutable {
            x_cap.grad().segment(i * chw, chw) += out_cap.grad();
        });
    }
    return out;
}

/// Adds a length-F bias row to every row of a rank-2 [N,F] tensor.
template <class S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (x.rank() != 2 || b.size() != x.dim(1))
        throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const Index rows = x.dim(0), cols = x.dim(1);
    ArrayX<S> y = x.values();
    for (Index r = 0; r < rows; ++r) y.segment(r * cols, cols) += b.values();
    bool needs = x.grad_path() || b.grad_path();
    Tensor<S> out = detail::make_output(x.shape(), std::move(y), tape, needs, "add_row_bias");
    if (tape && needs) {
        Tensor<S> x_cap = x, b_cap = b, out_cap = out;
        tape->record([x_cap, b_cap, out_cap, rows, cols]() mutable {
            if (x_cap.grad_path()) x_cap.grad() += out_cap.grad();
            if (b_cap.grad_path()) {
                ArrayX<double> acc = ArrayX<double>::Zero(cols);
                for (Index r = 0; r < rows; ++r)
                    acc += out_cap.grad().segment(r * cols, cols).template cast<double>();
                b_cap.grad() += acc.template cast<S>();
            }
        });
    }
    return out;
}

/// Adds a length-C bias to every channel of a rank-4 [N,C,H,W] tensor.
template <class S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (x.rank() != 4 || b.size() != x.dim(1))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const Index N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    ArrayX<S> y = x.values();
    for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) y.segment((n * C + c) * hw, hw) += b.values()[c];
    bool needs = x.grad_path() || b.grad_path();
    Tensor<S> out = detail::make_output(x.shape(), std::move(y), tape, needs, "add_channel_bias");
    if (tape && needs) {
        Tensor<S> x_cap = x, b_cap = b, out_cap = out;
        tape->record([x_cap, b_cap, out_cap, N, C, hw]() mutable {
            if (x_cap.grad_path()) x_cap.grad() += out_cap.grad();
            if (b_cap.grad_path()) {
                for (Index c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (Index n = 0; n < N; ++n)
                        acc += out_cap.grad().segment((n * C + c) * hw, hw).template cast<double>().sum();
                    b_cap.grad()[c] += static_cast<S>(acc);
                }
            }
        });
    }
    return out;
}

/// Row-wise softmax with the max-shift stabilization.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (x.rank() != 2) throw ShapeError("softmax_rows: expected rank-2, got " + shape_str(x.shape()));
    const Index rows = x.dim(0), cols = x.dim(1);
    ArrayX<S> y(x.size());
    for (Index r = 0; r < rows; ++r) {
        auto row = x.values().segment(r * cols, cols);
        S mx = row.maxCoeff();
        ArrayX<S> e = (row - mx).exp();
        double denom = detail::dsum(e);
        y.segment(r * cols, cols) = (e.template cast<double>() / denom).template cast<S>();
    }
    Tensor<S> out = detail::make_output(x.shape(), std::move(y), tape, x.grad_path(), "softmax");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, rows, cols]() mutable {
            for (Index r = 0; r < rows; ++r) {
                auto yr = out_cap.values().segment(r * cols, cols);
                auto gr = out_cap.grad().segment(r * cols, cols);
                double dot = (yr.template cast<double>() * gr.template cast<double>()).sum();
                x_cap.grad().segment(r * cols, cols) += yr * (gr - static_cast<S>(dot));
            }
        });
    }
    return out;
}

}  // namespace invdes
