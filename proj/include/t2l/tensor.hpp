#pragma once

// Dense f64 tensors with a dynamic reverse-mode gradient tape.
//
// A Tensor is a cheap shared handle. Every primitive that consumes at least one
// tensor with requires_grad set (while grad mode is on) records a tape node on
// its output holding the inputs and a backward rule; backward() walks the
// nodes reachable from a scalar loss in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "t2l/error.hpp"
#include "t2l/rng.hpp"

namespace t2l {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorImpl;
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
    const char* op = "";
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty means absent
    bool requires_grad = false;
    std::shared_ptr<Node> node;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

inline thread_local bool grad_mode = true;

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
    ~NoGradGuard() { detail::grad_mode = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

class Tensor {
   public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        if (t2l::numel(shape) != data.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " holds " + std::to_string(t2l::numel(shape)) +
                             " values, got " + std::to_string(data.size()));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const std::size_t n = t2l::numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
        std::vector<double> d(t2l::numel(shape));
        for (auto& x : d) x = rng.uniform(lo, hi);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad = false) {
        std::vector<double> d(t2l::numel(shape));
        for (auto& x : d) x = stddev * rng.normal();
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    /// Writable view; only meaningful on leaves (optimizers, initializers).
    std::span<double> mutable_data() {
        if (impl_->node) throw ContractError("mutable_data: tensor has a tape node");
        return impl_->data;
    }
    const std::vector<double>& values() const { return impl_->data; }

    double operator[](std::size_t i) const { return impl_->data[i]; }
    double item() const {
        if (numel() != 1) throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        if (impl_->node) throw ContractError("set_requires_grad: only leaves can change requires_grad");
        impl_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() { return impl_->ensure_grad(); }
    /// Drops the gradient buffer (it becomes absent, read as zero).
    void zero_grad() { impl_->grad.clear(); }

    bool has_tape_node() const { return static_cast<bool>(impl_->node); }
    const char* op_name() const { return impl_->node ? impl_->node->op : ""; }

    /// Constant copy, disconnected from the tape.
    Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

    void backward() const;

    detail::TensorImpl& impl() const { return *impl_; }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
    bool same(const Tensor& other) const { return impl_ == other.impl_; }

   private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

inline void Tensor::backward() const {
    if (numel() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (!impl_->requires_grad) throw ContractError("backward: loss is not connected to any trainable tensor");

    // Iterative post-order DFS: every node's inputs precede it in `order`.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->inputs.size()) {
            detail::TensorImpl* in = t->node->inputs[next++].get();
            if (in->requires_grad && !seen.count(in)) {
                seen.insert(in);
                stack.emplace_back(in, 0);
            }
            continue;
        }
        order.push_back(t);
        stack.pop_back();
    }

    for (auto* t : order)
        if (t->node) t->grad.assign(t->data.size(), 0.0);
    impl_->ensure_grad()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = *it;
        if (t->node && t->node->backward) t->node->backward(*t);
    }
    // Intermediate gradients are not retained.
    for (auto* t : order)
        if (t->node) std::vector<double>().swap(t->grad);
}

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, accumulate into C. Each output element is reduced
// over the inner index in ascending order, independent of the row count, so a
// batched product is bitwise equal to the same rows computed one at a time.
namespace kernel {

// Register-blocked micro-kernel: a 4 x 16 block of C stays in vector
// accumulators while p runs over the inner dimension. Blocking only changes
// which elements are computed together, never the order of the additions into
// one element, so results do not depend on m.
using v8 = double __attribute__((vector_size(64)));

inline v8 load8(const double* p) {
    v8 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}
inline void store8(double* p, v8 v) { std::memcpy(p, &v, sizeof v); }

/// C[m,n] += A * B[k,n], where row i of A is A[i * rsa + p * lda].
inline void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* __restrict A, std::size_t rsa,
                         std::size_t lda, const double* __restrict B, double* __restrict C) {
    auto a_at = [&](std::size_t i, std::size_t p) { return A[i * rsa + p * lda]; };
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = C + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            v8 x00 = load8(c0 + j), x01 = load8(c0 + j + 8), x10 = load8(c1 + j), x11 = load8(c1 + j + 8);
            v8 x20 = load8(c2 + j), x21 = load8(c2 + j + 8), x30 = load8(c3 + j), x31 = load8(c3 + j + 8);
            for (std::size_t p = 0; p < k; ++p) {
                const v8 b0 = load8(B + p * n + j), b1 = load8(B + p * n + j + 8);
                const double a0 = a_at(i, p), a1 = a_at(i + 1, p), a2 = a_at(i + 2, p), a3 = a_at(i + 3, p);
                x00 += a0 * b0;
                x01 += a0 * b1;
                x10 += a1 * b0;
                x11 += a1 * b1;
                x20 += a2 * b0;
                x21 += a2 * b1;
                x30 += a3 * b0;
                x31 += a3 * b1;
            }
            store8(c0 + j, x00);
            store8(c0 + j + 8, x01);
            store8(c1 + j, x10);
            store8(c1 + j + 8, x11);
            store8(c2 + j, x20);
            store8(c2 + j + 8, x21);
            store8(c3 + j, x30);
            store8(c3 + j + 8, x31);
        }
        if (j < n)
            for (std::size_t r = i; r < i + 4; ++r)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = a_at(r, p);
                    for (std::size_t jj = j; jj < n; ++jj) C[r * n + jj] += av * B[p * n + jj];
                }
    }
    for (; i < m; ++i) {
        double* c0 = C + i * n;
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            v8 x0 = load8(c0 + j), x1 = load8(c0 + j + 8);
            for (std::size_t p = 0; p < k; ++p) {
                const double a0 = a_at(i, p);
                x0 += a0 * load8(B + p * n + j);
                x1 += a0 * load8(B + p * n + j + 8);
            }
            store8(c0 + j, x0);
            store8(c0 + j + 8, x1);
        }
        if (j < n)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a_at(i, p);
                for (std::size_t jj = j; jj < n; ++jj) c0[jj] += av * B[p * n + jj];
            }
    }
}

/// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    gemm_strided(m, n, k, A, k, 1, B, C);
}

/// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    gemm_strided(m, n, k, A, 1, m, B, C);
}

/// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
    gemm_nn(m, n, k, A, bt.data(), C);
}

}  // namespace kernel

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

/// Wraps a freshly computed value; attaches a tape node when gradients are needed.
inline Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn fn,
                          const char* op) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool needed = false;
    for (const auto& t : inputs) needed = needed || t.requires_grad();
    if (!needed) return out;
    auto node = std::make_shared<Node>();
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.impl_ptr());
    node->backward = std::move(fn);
    node->op = op;
    out.impl().requires_grad = true;
    out.impl().node = std::move(node);
    return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return detail::make_result(a.shape(), std::move(out), {a, b},
        [ai, bi](const detail::TensorImpl& o) {
            for (auto* in : {ai.get(), bi.get()}) {
                if (!in->requires_grad) continue;
                auto& g = in->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            }
        }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return detail::make_result(a.shape(), std::move(out), {a, b},
        [ai, bi](const detail::TensorImpl& o) {
            if (ai->requires_grad) {
                auto& g = ai->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            }
            if (bi->requires_grad) {
                auto& g = bi->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
            }
        }, "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return detail::make_result(a.shape(), std::move(out), {a, b},
        [ai, bi](const detail::TensorImpl& o) {
            if (ai->requires_grad) {
                auto& g = ai->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                auto& g = bi->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
            }
        }, "mul");
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    auto ai = a.impl_ptr();
    return detail::make_result(a.shape(), std::move(out), {a},
        [ai, s](const detail::TensorImpl& o) {
            auto& g = ai->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
        }, "scale");
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// x[..., n] + bias[n]
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t n = bias.numel();
    if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != n)
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % n];
    auto xi = x.impl_ptr(), bi = bias.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {x, bias},
        [xi, bi, n](const detail::TensorImpl& o) {
            if (xi->requires_grad) {
                auto& g = xi->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            }
            if (bi->requires_grad) {
                auto& g = bi->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % n] += o.grad[i];
            }
        }, "add_bias");
}

inline Tensor silu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / (1.0 + std::exp(-x[i]));
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {x},
        [xi](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xi->data[i];
                const double sig = 1.0 / (1.0 + std::exp(-v));
                g[i] += o.grad[i] * sig * (1.0 + v * (1.0 - sig));
            }
        }, "silu");
}

inline Tensor abs(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x[i]);
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {x},
        [xi](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xi->data[i];
                g[i] += o.grad[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
            }
        }, "abs");
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto xi = x.impl_ptr();
    return detail::make_result({1}, {s}, {x},
        [xi](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (double& v : g) v += o.grad[0];
        }, "sum");
}

inline Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Products

/// Matrix product over the last two axes.
///
/// If `b` is 2-D it is shared: `a` [..., k] times b [k, n] (or b [n, k] when
/// transpose_b) gives [..., n]. Otherwise `a` [..., m, k] and `b` [..., k, n]
/// must have identical leading batch axes.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
    auto mismatch = [&] {
        return ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()) + (transpose_b ? "^T" : ""));
    };
    if (a.rank() == 0 || b.rank() < 2) throw mismatch();

    if (b.rank() == 2) {
        const std::size_t k = a.shape().back();
        const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
        const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
        if (k != bk) throw mismatch();
        const std::size_t rows = a.numel() / k;
        Shape out_shape = a.shape();
        out_shape.back() = n;
        std::vector<double> out(rows * n, 0.0);
        if (transpose_b)
            kernel::gemm_nt(rows, n, k, a.data().data(), b.data().data(), out.data());
        else
            kernel::gemm_nn(rows, n, k, a.data().data(), b.data().data(), out.data());
        auto ai = a.impl_ptr(), bi = b.impl_ptr();
        return detail::make_result(std::move(out_shape), std::move(out), {a, b},
            [ai, bi, rows, n, k, transpose_b](const detail::TensorImpl& o) {
                const double* go = o.grad.data();
                if (ai->requires_grad) {
                    double* ga = ai->ensure_grad().data();
                    if (transpose_b)
                        kernel::gemm_nn(rows, k, n, go, bi->data.data(), ga);
                    else
                        kernel::gemm_nt(rows, k, n, go, bi->data.data(), ga);
                }
                if (bi->requires_grad) {
                    double* gb = bi->ensure_grad().data();
                    if (transpose_b)
                        kernel::gemm_tn(n, k, rows, go, ai->data.data(), gb);
                    else
                        kernel::gemm_tn(k, n, rows, ai->data.data(), go, gb);
                }
            }, "matmul");
    }

    if (a.rank() != b.rank()) throw mismatch();
    const std::size_t r = a.rank();
    for (std::size_t i = 0; i + 2 < r; ++i)
        if (a.dim(i) != b.dim(i)) throw mismatch();
    const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
    const std::size_t bk = transpose_b ? b.dim(r - 1) : b.dim(r - 2);
    const std::size_t n = transpose_b ? b.dim(r - 2) : b.dim(r - 1);
    if (k != bk) throw mismatch();
    const std::size_t batch = a.numel() / (m * k);
    Shape out_shape = a.shape();
    out_shape[r - 1] = n;
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
        const double* pa = a.data().data() + s * m * k;
        const double* pb = b.data().data() + s * k * n;
        double* pc = out.data() + s * m * n;
        if (transpose_b)
            kernel::gemm_nt(m, n, k, pa, pb, pc);
        else
            kernel::gemm_nn(m, n, k, pa, pb, pc);
    }
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return detail::make_result(std::move(out_shape), std::move(out), {a, b},
        [ai, bi, batch, m, n, k, transpose_b](const detail::TensorImpl& o) {
            for (std::size_t s = 0; s < batch; ++s) {
                const double* go = o.grad.data() + s * m * n;
                const double* pa = ai->data.data() + s * m * k;
                const double* pb = bi->data.data() + s * k * n;
                if (ai->requires_grad) {
                    double* ga = ai->ensure_grad().data() + s * m * k;
                    if (transpose_b)
                        kernel::gemm_nn(m, k, n, go, pb, ga);
                    else
                        kernel::gemm_nt(m, k, n, go, pb, ga);
                }
                if (bi->requires_grad) {
                    double* gb = bi->ensure_grad().data() + s * k * n;
                    if (transpose_b)
                        kernel::gemm_tn(n, k, m, go, pa, gb);
                    else
                        kernel::gemm_tn(k, n, m, pa, go, gb);
                }
            }
        }, "bmm");
}

/// x[..., in] W[out, in]^T + bias[out]
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
    Tensor y = matmul(x, weight, /*transpose_b=*/true);
    return bias.defined() ? add_bias(y, bias) : y;
}

// ---------------------------------------------------------------------------
// Normalization and probabilities

/// Per-row normalization over the last axis followed by gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t n = x.shape().back();
    if (gain.numel() != n || bias.numel() != n)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* px = x.data().data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += px[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) {
            xhat[r * n + i] = (px[i] - mu) * rstd[r];
            out[r * n + i] = gain[i] * xhat[r * n + i] + bias[i];
        }
    }
    auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {x, gain, bias},
        [xi, gi, bi, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const detail::TensorImpl& o) {
            if (gi->requires_grad) {
                auto& g = gi->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[r * n + i] * xhat[r * n + i];
            }
            if (bi->requires_grad) {
                auto& g = bi->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[r * n + i];
            }
            if (xi->requires_grad) {
                auto& g = xi->ensure_grad();
                std::vector<double> dxh(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        dxh[i] = o.grad[r * n + i] * gi->data[i];
                        m1 += dxh[i];
                        m2 += dxh[i] * xhat[r * n + i];
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i)
                        g[r * n + i] += rstd[r] * (dxh[i] - m1 - xhat[r * n + i] * m2);
                }
            }
        }, "layer_norm");
}

/// Softmax over the last axis. With `causal`, x is [..., T, T] and entries
/// above the diagonal are excluded (output 0).
inline Tensor softmax(const Tensor& x, bool causal = false) {
    if (x.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t n = x.shape().back();
    if (causal && (x.rank() < 2 || x.dim(x.rank() - 2) != n))
        throw ShapeError("softmax: causal mask needs square trailing axes, got " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t valid = causal ? (r % n) + 1 : n;
        const double* px = x.data().data() + r * n;
        double* py = out.data() + r * n;
        double mx = px[0];
        for (std::size_t i = 1; i < valid; ++i) mx = std::max(mx, px[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < valid; ++i) z += (py[i] = std::exp(px[i] - mx));
        for (std::size_t i = 0; i < valid; ++i) py[i] /= z;
    }
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {x},
        [xi, n, rows](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = o.data.data() + r * n;
                const double* gy = o.grad.data() + r * n;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += y[i] * gy[i];
                for (std::size_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (gy[i] - dot);
            }
        }, "softmax");
}

/// Mean negative log-likelihood of `targets` under softmax(logits) over the
/// last axis. Rows whose target is negative are masked out of the mean.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() == 0) throw ShapeError("cross_entropy: scalar logits");
    const std::size_t vocab = logits.shape().back();
    const std::size_t rows = logits.numel() / vocab;
    if (targets.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " logit rows");
    std::size_t count = 0;
    for (int t : targets) {
        if (t >= static_cast<int>(vocab))
            throw IndexError("cross_entropy: target " + std::to_string(t) + " >= vocab " + std::to_string(vocab));
        if (t >= 0) ++count;
    }
    if (count == 0) throw ContractError("cross_entropy: every position is masked");

    std::vector<double> probs(logits.numel(), 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0) continue;
        const double* px = logits.data().data() + r * vocab;
        double* pp = probs.data() + r * vocab;
        double mx = px[0];
        for (std::size_t i = 1; i < vocab; ++i) mx = std::max(mx, px[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < vocab; ++i) z += (pp[i] = std::exp(px[i] - mx));
        for (std::size_t i = 0; i < vocab; ++i) pp[i] /= z;
        loss -= px[targets[r]] - mx - std::log(z);
    }
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<int> tg(targets.begin(), targets.end());
    auto li = logits.impl_ptr();
    return detail::make_result({1}, {loss * inv}, {logits},
        [li, vocab, rows, inv, tg = std::move(tg), probs = std::move(probs)](const detail::TensorImpl& o) {
            auto& g = li->ensure_grad();
            const double s = o.grad[0] * inv;
            for (std::size_t r = 0; r < rows; ++r) {
                if (tg[r] < 0) continue;
                for (std::size_t i = 0; i < vocab; ++i) g[r * vocab + i] += s * probs[r * vocab + i];
                g[r * vocab + static_cast<std::size_t>(tg[r])] -= s;
            }
        }, "cross_entropy");
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Rows of a 2-D table gathered by index: [ids.size(), d].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v)
            throw IndexError("embedding: index " + std::to_string(ids[r]) + " outside [0, " + std::to_string(v) + ")");
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    auto ti = table.impl_ptr();
    return detail::make_result({ids.size(), d}, std::move(out), {table},
        [ti, d, idx = std::move(idx)](const detail::TensorImpl& o) {
            auto& g = ti->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                double* dst = g.data() + static_cast<std::size_t>(idx[r]) * d;
                for (std::size_t i = 0; i < d; ++i) dst[i] += o.grad[r * d + i];
            }
        }, "embedding");
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
    auto xi = x.impl_ptr();
    return detail::make_result(std::move(shape), x.values(), {x},
        [xi](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }, "reshape");
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// For each output flat index, the source flat index under permutation `axes`.
inline std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes) {
    const std::size_t r = in.size();
    const auto in_st = strides_of(in);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) out[i] = in[axes[i]];
    std::vector<std::size_t> map(numel(in));
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t f = 0; f < map.size(); ++f) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_st[axes[i]];
        map[f] = src;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

}  // namespace detail

/// Axis permutation: output axis i is input axis axes[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    std::vector<bool> used(r, false);
    if (axes.size() != r) throw ShapeError("permute: axis list does not match rank of " + shape_str(x.shape()));
    for (auto a : axes) {
        if (a >= r || used[a]) throw ShapeError("permute: invalid axis list for " + shape_str(x.shape()));
        used[a] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
    auto map = detail::permute_map(x.shape(), axes);
    std::vector<double> out(x.numel());
    for (std::size_t f = 0; f < out.size(); ++f) out[f] = x[map[f]];
    auto xi = x.impl_ptr();
    return detail::make_result(std::move(out_shape), std::move(out), {x},
        [xi, map = std::move(map)](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (std::size_t f = 0; f < map.size(); ++f) g[map[f]] += o.grad[f];
        }, "permute");
}

/// Contiguous range [start, start+len) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= x.rank() || start + len > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t full = x.dim(axis);
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    std::vector<double> out(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.data().data() + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
    auto xi = x.impl_ptr();
    return detail::make_result(std::move(out_shape), std::move(out), {x},
        [xi, outer, inner, full, start, len](const detail::TensorImpl& o) {
            auto& g = xi->ensure_grad();
            for (std::size_t b = 0; b < outer; ++b)
                for (std::size_t i = 0; i < len * inner; ++i)
                    g[(b * full + start) * inner + i] += o.grad[b * len * inner + i];
        }, "slice");
}

/// Concatenation along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = xs[0].shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
    std::size_t total = 0;
    for (const auto& t : xs) {
        if (t.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && t.dim(i) != ref[i])
                throw ShapeError("concat: " + shape_str(t.shape()) + " vs " + shape_str(ref));
        total += t.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
    Shape out_shape = ref;
    out_shape[axis] = total;
    std::vector<double> out(outer * total * inner);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& t : xs) {
        const std::size_t w = t.dim(axis);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(t.data().data() + o * w * inner, w * inner, out.data() + (o * total + offset) * inner);
        widths.push_back(w);
        offset += w;
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> ins;
    for (const auto& t : xs) ins.push_back(t.impl_ptr());
    return detail::make_result(std::move(out_shape), std::move(out), xs,
        [ins, widths, outer, inner, total](const detail::TensorImpl& o) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < ins.size(); ++k) {
                const std::size_t w = widths[k];
                if (ins[k]->requires_grad) {
                    auto& g = ins[k]->ensure_grad();
                    for (std::size_t b = 0; b < outer; ++b)
                        for (std::size_t i = 0; i < w * inner; ++i)
                            g[b * w * inner + i] += o.grad[(b * total + offset) * inner + i];
                }
                offset += w;
            }
        }, "concat");
}

/// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("stack: no inputs");
    std::vector<Tensor> lifted;
    lifted.reserve(xs.size());
    for (const auto& t : xs) {
        if (t.shape() != xs[0].shape())
            throw ShapeError("stack: " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
        Shape s = t.shape();
        s.insert(s.begin(), 1);
        lifted.push_back(reshape(t, std::move(s)));
    }
    return concat(lifted, 0);
}

/// Inverted dropout: zeroes each entry with probability p, scales survivors by 1/(1-p).
inline Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    const double keep = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
    return mul(x, Tensor(x.shape(), std::move(mask)));
}

/// Squared L2 norm of all values.
inline double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

}  // namespace t2l
