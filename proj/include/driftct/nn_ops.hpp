#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "driftct/tensor.hpp"

// Structured primitives: matmul, conv2d (zero-padded "same" with stride),
// nearest-neighbor upsampling, channel concat, row bias, patch gather.
// Every output element is accumulated in a fixed order, so forward values are
// bit-identical across runs on one platform.

namespace driftct {

namespace detail {

// C(M,N) += A(M,K) * B(K,N)
inline void mm_nn_acc(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C(M,N) += A(M,P) * B(N,P)^T
inline void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t n, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * p;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * p;
            double s = 0.0;
            for (std::size_t t = 0; t < p; ++t) s += ai[t] * bj[t];
            c[i * n + j] += s;
        }
    }
}

// C(I,N) += A(K,I)^T * B(K,N)
inline void mm_tn_acc(const double* a, const double* b, double* c, std::size_t k,
                      std::size_t i_dim, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * i_dim;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < i_dim; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out(Shape{m, n});
    detail::mm_nn_acc(a.values().data(), b.values().data(), out.values_mut().data(), m, k, n);
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on, m, k, n] {
                if (on->grad.empty()) return;
                const double* go = on->grad.data();
                if (an->requires_grad) {
                    detail::mm_nt_acc(go, bn->values.data(), an->grad_buf().data(), m, k, n);
                }
                if (bn->requires_grad) {
                    detail::mm_tn_acc(an->values.data(), go, bn->grad_buf().data(), m, k, n);
                }
            },
            {an, bn, on});
    }
    return out;
}

// y[i, j] = x[i, j] + b[j]
inline Tensor bias_add_rows(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1]) {
        throw ShapeError("bias_add_rows: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    Tensor out(x.shape());
    auto o = out.values_mut();
    auto xv = x.values(), bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xv[i * n + j] + bv[j];
    }
    if (detail::tracing({&x, &b})) {
        detail::mark_traced(out);
        auto xn = x.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [xn, bn, on, m, n] {
                if (on->grad.empty()) return;
                const auto& go = on->grad;
                if (xn->requires_grad) {
                    auto& g = xn->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                }
                if (bn->requires_grad) {
                    auto& g = bn->grad_buf();
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) g[j] += go[i * n + j];
                    }
                }
            },
            {xn, bn, on});
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

struct Conv2dDims {
    std::size_t n, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t stride, ph, pw;
    std::size_t ho, wo;
    std::size_t ckk() const { return cin * kh * kw; }
    std::size_t positions() const { return ho * wo; }
};

inline Conv2dDims conv2d_dims(const Shape& x, const Shape& w, std::size_t stride) {
    if (x.size() != 4 || w.size() != 4) {
        throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(x) +
                         " and " + shape_str(w));
    }
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    Conv2dDims d{};
    d.n = x[0];
    d.cin = x[1];
    d.h = x[2];
    d.w = x[3];
    d.cout = w[0];
    d.kh = w[2];
    d.kw = w[3];
    d.stride = stride;
    if (w[1] != d.cin) {
        throw ShapeError("conv2d: input channels " + std::to_string(d.cin) +
                         " do not match kernel " + shape_str(w));
    }
    if (d.kh % 2 == 0 || d.kw % 2 == 0) {
        throw ValueError("conv2d: kernel must be odd-sized, got " + shape_str(w));
    }
    d.ph = d.kh / 2;
    d.pw = d.kw / 2;
    d.ho = (d.h + 2 * d.ph - d.kh) / stride + 1;
    d.wo = (d.w + 2 * d.pw - d.kw) / stride + 1;
    return d;
}

// col is (cin*kh*kw) x (ho*wo) for one image.
inline void im2col(const double* x, const Conv2dDims& d, double* col) {
    const std::size_t p = d.positions();
    for (std::size_t c = 0; c < d.cin; ++c) {
        const double* xc = x + c * d.h * d.w;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                double* row = col + ((c * d.kh + ky) * d.kw + kx) * p;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                        static_cast<std::ptrdiff_t>(d.ph);
                    double* out = row + oy * d.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
                        for (std::size_t ox = 0; ox < d.wo; ++ox) out[ox] = 0.0;
                        continue;
                    }
                    const double* xrow = xc + static_cast<std::size_t>(iy) * d.w;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                            static_cast<std::ptrdiff_t>(d.pw);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w))
                                      ? 0.0
                                      : xrow[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

inline void col2im_acc(const double* col, const Conv2dDims& d, double* gx) {
    const std::size_t p = d.positions();
    for (std::size_t c = 0; c < d.cin; ++c) {
        double* gc = gx + c * d.h * d.w;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const double* row = col + ((c * d.kh + ky) * d.kw + kx) * p;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                        static_cast<std::ptrdiff_t>(d.ph);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    double* grow = gc + static_cast<std::size_t>(iy) * d.w;
                    const double* in = row + oy * d.wo;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                            static_cast<std::ptrdiff_t>(d.pw);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        grow[static_cast<std::size_t>(ix)] += in[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// Zero-padded "same" convolution (cross-correlation) with optional stride.
// x: [N, Cin, H, W], w: [Cout, Cin, kh, kw], bias: [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::size_t stride = 1) {
    const auto d = detail::conv2d_dims(x.shape(), w.shape(), stride);
    if (bias.shape() != Shape{d.cout}) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match kernel " + shape_str(w.shape()));
    }
    const std::size_t p = d.positions();
    Tensor out(Shape{d.n, d.cout, d.ho, d.wo});
    auto ov = out.values_mut();
    auto bv = bias.values();
    std::vector<double> col(d.ckk() * p);
    for (std::size_t n = 0; n < d.n; ++n) {
        detail::im2col(x.values().data() + n * d.cin * d.h * d.w, d, col.data());
        double* on = ov.data() + n * d.cout * p;
        for (std::size_t oc = 0; oc < d.cout; ++oc) {
            double* row = on + oc * p;
            for (std::size_t i = 0; i < p; ++i) row[i] = bv[oc];
        }
        detail::mm_nn_acc(w.values().data(), col.data(), on, d.cout, d.ckk(), p);
    }
    if (detail::tracing({&x, &w, &bias})) {
        detail::mark_traced(out);
        auto xn = x.node(), wn = w.node(), bn = bias.node(), on = out.node();
        Tape::active()->record(
            [xn, wn, bn, on, d] {
                if (on->grad.empty()) return;
                const std::size_t p = d.positions();
                std::vector<double> col;
                std::vector<double> dcol;
                if (wn->requires_grad) col.resize(d.ckk() * p);
                if (xn->requires_grad) dcol.resize(d.ckk() * p);
                for (std::size_t n = 0; n < d.n; ++n) {
                    const double* go = on->grad.data() + n * d.cout * p;
                    if (bn->requires_grad) {
                        auto& gb = bn->grad_buf();
                        for (std::size_t oc = 0; oc < d.cout; ++oc) {
                            double s = 0.0;
                            for (std::size_t i = 0; i < p; ++i) s += go[oc * p + i];
                            gb[oc] += s;
                        }
                    }
                    if (wn->requires_grad) {
                        detail::im2col(xn->values.data() + n * d.cin * d.h * d.w, d,
                                       col.data());
                        detail::mm_nt_acc(go, col.data(), wn->grad_buf().data(), d.cout,
                                          d.ckk(), p);
                    }
                    if (xn->requires_grad) {
                        std::fill(dcol.begin(), dcol.end(), 0.0);
                        detail::mm_tn_acc(wn->values.data(), go, dcol.data(), d.cout,
                                          d.ckk(), p);
                        detail::col2im_acc(dcol.data(), d,
                                           xn->grad_buf().data() + n * d.cin * d.h * d.w);
                    }
                }
            },
            {xn, wn, bn, on});
    }
    return out;
}

// Nearest-neighbor x2 upsampling of [N, C, H, W].
inline Tensor upsample_nearest2(const Tensor& x) {
    if (x.shape().size() != 4) {
        throw ShapeError("upsample_nearest2: expected 4-d input, got " +
                         shape_str(x.shape()));
    }
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out(Shape{n, c, 2 * h, 2 * w});
    auto ov = out.values_mut();
    auto xv = x.values();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const double* in = xv.data() + nc * h * w;
        double* o = ov.data() + nc * 4 * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x2 = 0; x2 < w; ++x2) {
                const double v = in[y * w + x2];
                double* base = o + (2 * y) * (2 * w) + 2 * x2;
                base[0] = v;
                base[1] = v;
                base[2 * w] = v;
                base[2 * w + 1] = v;
            }
        }
    }
    if (detail::tracing({&x})) {
        detail::mark_traced(out);
        auto xn = x.node(), on = out.node();
        Tape::active()->record(
            [xn, on, n, c, h, w] {
                if (on->grad.empty() || !xn->requires_grad) return;
                auto& gx = xn->grad_buf();
                const auto& go = on->grad;
                for (std::size_t nc = 0; nc < n * c; ++nc) {
                    double* g = gx.data() + nc * h * w;
                    const double* o = go.data() + nc * 4 * h * w;
                    for (std::size_t y = 0; y < h; ++y) {
                        for (std::size_t x2 = 0; x2 < w; ++x2) {
                            const double* base = o + (2 * y) * (2 * w) + 2 * x2;
                            g[y * w + x2] += base[0] + base[1] + base[2 * w] + base[2 * w + 1];
                        }
                    }
                }
            },
            {xn, on});
    }
    return out;
}

// Concatenation of [N, Ca, H, W] and [N, Cb, H, W] along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] ||
        sa[3] != sb[3]) {
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(sa) + " vs " +
                         shape_str(sb));
    }
    const std::size_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor out(Shape{n, ca + cb, sa[2], sa[3]});
    auto ov = out.values_mut();
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        double* o = ov.data() + i * (ca + cb) * hw;
        std::copy_n(av.data() + i * ca * hw, ca * hw, o);
        std::copy_n(bv.data() + i * cb * hw, cb * hw, o + ca * hw);
    }
    if (detail::tracing({&a, &b})) {
        detail::mark_traced(out);
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record(
            [an, bn, on, n, ca, cb, hw] {
                if (on->grad.empty()) return;
                const auto& go = on->grad;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* g = go.data() + i * (ca + cb) * hw;
                    if (an->requires_grad) {
                        double* ga = an->grad_buf().data() + i * ca * hw;
                        for (std::size_t j = 0; j < ca * hw; ++j) ga[j] += g[j];
                    }
                    if (bn->requires_grad) {
                        double* gb = bn->grad_buf().data() + i * cb * hw;
                        for (std::size_t j = 0; j < cb * hw; ++j) gb[j] += g[ca * hw + j];
                    }
                }
            },
            {an, bn, on});
    }
    return out;
}

// Reference to a square patch inside one image of a batch.
struct PatchRef {
    std::size_t image;
    std::size_t y;
    std::size_t x;
};

// Stacks patches of a [N, C, H, W] batch into [P, C, s, s]. Differentiable:
// the backward pass scatter-adds into the source, so overlapping patches
// accumulate their contributions.
inline Tensor gather_patches(const Tensor& batch, const std::vector<PatchRef>& refs,
                             std::size_t size) {
    const auto& s = batch.shape();
    if (s.size() != 4) {
        throw ShapeError("gather_patches: expected 4-d batch, got " + shape_str(s));
    }
    const std::size_t c = s[1], h = s[2], w = s[3];
    if (size > h || size > w) {
        throw ValueError("gather_patches: patch size " + std::to_string(size) +
                         " exceeds image " + std::to_string(h) + "x" + std::to_string(w));
    }
    for (const auto& r : refs) {
        if (r.image >= s[0] || r.y + size > h || r.x + size > w) {
            throw ValueError("gather_patches: patch out of bounds");
        }
    }
    Tensor out(Shape{refs.size(), c, size, size});
    auto ov = out.values_mut();
    auto bvals = batch.values();
    for (std::size_t pi = 0; pi < refs.size(); ++pi) {
        const auto& r = refs[pi];
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double* src = bvals.data() + ((r.image * c + ci) * h + r.y) * w + r.x;
            double* dst = ov.data() + (pi * c + ci) * size * size;
            for (std::size_t y = 0; y < size; ++y) {
                std::copy_n(src + y * w, size, dst + y * size);
            }
        }
    }
    if (detail::tracing({&batch})) {
        detail::mark_traced(out);
        auto bn = batch.node(), on = out.node();
        auto refs_copy = refs;
        Tape::active()->record(
            [bn, on, refs_copy, c, h, w, size] {
                if (on->grad.empty() || !bn->requires_grad) return;
                auto& gb = bn->grad_buf();
                const auto& go = on->grad;
                for (std::size_t pi = 0; pi < refs_copy.size(); ++pi) {
                    const auto& r = refs_copy[pi];
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        double* dst = gb.data() + ((r.image * c + ci) * h + r.y) * w + r.x;
                        const double* src = go.data() + (pi * c + ci) * size * size;
                        for (std::size_t y = 0; y < size; ++y) {
                            for (std::size_t x = 0; x < size; ++x) {
                                dst[y * w + x] += src[y * size + x];
                            }
                        }
                    }
                }
            },
            {bn, on});
    }
    return out;
}

} // namespace driftct
