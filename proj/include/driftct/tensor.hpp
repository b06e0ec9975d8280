#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "driftct/errors.hpp"

// Dense double-precision tensors with tape-based reverse-mode differentiation.
// A Tensor is a cheap handle onto a shared node; copying a Tensor aliases the
// node. Gradients are recorded on the thread-local active Tape and replayed in
// reverse by Tape::backward. Tensors and tapes are confined to one thread.

namespace driftct {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until first touched by backward
    bool requires_grad = false;

    std::vector<double>& grad_buf() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        node_->shape = std::move(shape);
        node_->values.assign(shape_numel(node_->shape), fill);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " scalars, got " +
                             std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 0.0, requires_grad);
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        Tensor t(std::move(shape), 0.0, requires_grad);
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : t.node_->values) v = dist(rng);
        return t;
    }

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->values.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::span<const double> values() const { return node_->values; }
    // Mutating values of a tensor that already participates in a recorded
    // computation invalidates the tape; restrict to leaves between steps.
    std::span<double> values_mut() { return node_->values; }

    double value() const {
        if (numel() != 1) {
            throw ShapeError("value(): tensor of shape " + shape_str(shape()) +
                             " is not a scalar");
        }
        return node_->values[0];
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() {
        if (node_ && !node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    }

    detail::NodePtr node() const { return node_; }

private:
    detail::NodePtr node_;
};

// Ordered record of primitive operations. Replaying it back-to-front applies
// the chain rule exactly once per recorded op. One tape per training step;
// destroy or clear() it before the next step.
class Tape {
public:
    Tape() : prev_(active_slot()) { active_slot() = this; }
    ~Tape() { active_slot() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_slot(); }

    void record(std::function<void()> backward, std::vector<detail::NodePtr> keep_alive) {
        ops_.push_back({std::move(keep_alive), std::move(backward)});
    }

    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    void backward(const Tensor& root) {
        if (root.numel() != 1) {
            throw ShapeError("backward: root must be scalar, got shape " +
                             shape_str(root.shape()));
        }
        if (!root.requires_grad()) {
            throw ValueError("backward: root does not depend on any recorded input");
        }
        auto& g = root.node()->grad_buf();
        g[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    }

private:
    struct Op {
        std::vector<detail::NodePtr> keep_alive;
        std::function<void()> backward;
    };

    static Tape*& active_slot() {
        static thread_local Tape* tape = nullptr;
        return tape;
    }

    Tape* prev_;
    std::vector<Op> ops_;
};

// Suppresses gradient recording in a scope (validation, inference, field math).
struct NoGradGuard {
    NoGradGuard() : saved_(slot()) { slot() = true; }
    ~NoGradGuard() { slot() = saved_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool enabled() { return slot(); }

private:
    static bool& slot() {
        static thread_local bool no_grad = false;
        return no_grad;
    }
    bool saved_;
};

namespace detail {

inline bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (NoGradGuard::enabled() || Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

inline void mark_traced(Tensor& out) { out.set_requires_grad(true); }

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    Tensor out(a.shape());
    auto o = out.values_mut();
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on] {
                if (on->grad.empty()) return;
                const auto& go = on->grad;
                if (an->requires_grad) {
                    auto& g = an->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                }
                if (bn->requires_grad) {
                    auto& g = bn->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                }
            },
            {an, bn, on});
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    Tensor out(a.shape());
    auto o = out.values_mut();
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on] {
                if (on->grad.empty()) return;
                const auto& go = on->grad;
                if (an->requires_grad) {
                    auto& g = an->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                }
                if (bn->requires_grad) {
                    auto& g = bn->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
                }
            },
            {an, bn, on});
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    Tensor out(a.shape());
    auto o = out.values_mut();
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on] {
                if (on->grad.empty()) return;
                const auto& go = on->grad;
                if (an->requires_grad) {
                    auto& g = an->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bn->values[i];
                }
                if (bn->requires_grad) {
                    auto& g = bn->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * an->values[i];
                }
            },
            {an, bn, on});
    }
    return out;
}

inline Tensor scalar_mul(const Tensor& a, double c) {
    Tensor out(a.shape());
    auto o = out.values_mut();
    auto av = a.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * av[i];
    if (detail::tracing({&a})) {
        detail::mark_traced(out);
        auto an = a.node(), on = out.node();
        Tape::active()->record(
            [an, on, c] {
                if (on->grad.empty() || !an->requires_grad) return;
                auto& g = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * on->grad[i];
            },
            {an, on});
    }
    return out;
}

// Derivative at exactly 0 uses the negative-slope branch.
inline Tensor leaky_relu(const Tensor& a, double slope) {
    Tensor out(a.shape());
    auto o = out.values_mut();
    auto av = a.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : slope * av[i];
    if (detail::tracing({&a})) {
        detail::mark_traced(out);
        auto an = a.node(), on = out.node();
        Tape::active()->record(
            [an, on, slope] {
                if (on->grad.empty() || !an->requires_grad) return;
                auto& g = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += (an->values[i] > 0.0 ? 1.0 : slope) * on->grad[i];
                }
            },
            {an, on});
    }
    return out;
}

// Forwards values unchanged and contributes zero derivative: the result is a
// fresh leaf with no link back to the input.
inline Tensor stop_gradient(const Tensor& a) {
    return Tensor(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::tracing({&a})) {
        detail::mark_traced(out);
        auto an = a.node(), on = out.node();
        Tape::active()->record(
            [an, on] {
                if (on->grad.empty() || !an->requires_grad) return;
                const double go = on->grad[0];
                auto& g = an->grad_buf();
                for (double& gi : g) gi += go;
            },
            {an, on});
    }
    return out;
}

inline Tensor l1_mean(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("l1_mean", a, b);
    auto av = a.values(), bv = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(av[i] - bv[i]);
    const double n = static_cast<double>(av.size());
    Tensor out = Tensor::scalar(s / n);
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on, n] {
                if (on->grad.empty()) return;
                const double go = on->grad[0] / n;
                for (std::size_t i = 0; i < an->values.size(); ++i) {
                    const double d = an->values[i] - bn->values[i];
                    const double sgn = (d > 0.0) - (d < 0.0);
                    if (an->requires_grad) an->grad_buf()[i] += go * sgn;
                    if (bn->requires_grad) bn->grad_buf()[i] -= go * sgn;
                }
            },
            {an, bn, on});
    }
    return out;
}

inline Tensor mse_mean(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mse_mean", a, b);
    auto av = a.values(), bv = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    const double n = static_cast<double>(av.size());
    Tensor out = Tensor::scalar(s / n);
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on, n] {
                if (on->grad.empty()) return;
                const double go = 2.0 * on->grad[0] / n;
                for (std::size_t i = 0; i < an->values.size(); ++i) {
                    const double d = an->values[i] - bn->values[i];
                    if (an->requires_grad) an->grad_buf()[i] += go * d;
                    if (bn->requires_grad) bn->grad_buf()[i] -= go * d;
                }
            },
            {an, bn, on});
    }
    return out;
}

} // namespace driftct
