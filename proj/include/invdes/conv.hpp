#pragma once

#include <type_traits>
#include <vector>

#include "invdes/tensor.hpp"

// 2-d cross-correlation, its transpose, and batch normalization.
//
// conv2d lowers images to im2col matrices and runs one GEMM per batch chunk;
// deconv2d is implemented as the exact adjoint of conv2d with the same
// geometry, so <deconv(x), y> == <x, conv(y)> holds by construction (and is
// checked numerically in the tests).
//
// Kernel layout conventions (row-major flat storage):
//   conv2d:   kernels [C_out, C_in, k, k], input [N, C_in, H, W] (or rank-3
//             single image), output [N, C_out, H', W'].
//   deconv2d: kernels [C_in, C_out, k, k]; the same array read as conv
//             kernels maps C_out -> C_in, which is what makes the pair
//             adjoint.

namespace invdes {

struct ConvGeom {
    Index in_c = 0, in_h = 0, in_w = 0;
    Index out_c = 0, out_h = 0, out_w = 0;
    Index k = 0, stride = 1, pad = 0;
};

inline ConvGeom conv_geometry(Index in_c, Index in_h, Index in_w, Index out_c, Index k,
                              Index stride, Index pad) {
    if (stride < 1 || pad < 0 || k < 1) throw ShapeError("conv2d: bad stride/pad/kernel");
    const Index num_h = in_h + 2 * pad - k;
    const Index num_w = in_w + 2 * pad - k;
    if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0)
        throw ShapeError("conv2d: non-integer output size for H=" + std::to_string(in_h) +
                         " k=" + std::to_string(k) + " s=" + std::to_string(stride) +
                         " p=" + std::to_string(pad));
    ConvGeom g;
    g.in_c = in_c;
    g.in_h = in_h;
    g.in_w = in_w;
    g.out_c = out_c;
    g.out_h = num_h / stride + 1;
    g.out_w = num_w / stride + 1;
    g.k = k;
    g.stride = stride;
    g.pad = pad;
    return g;
}

namespace detail {

// Grow-only thread-local workspace for the lowering matrices; steady-state
// training does no further allocation. The pointer is pinned to Eigen's
// packet alignment: GEMV/GEMM kernels group accumulations by data alignment,
// so an alignment that drifts between calls would change low-order result
// bits and break bit-reproducibility.
template <class S>
Eigen::Map<RowMajorMat<S>, Eigen::Aligned64> scratch_mat(int slot, Index rows, Index cols) {
    static thread_local std::vector<S> bufs[4];
    constexpr Index pad = 64 / sizeof(S);
    auto& b = bufs[slot];
    if (static_cast<Index>(b.size()) < rows * cols + pad)
        b.resize(static_cast<std::size_t>(rows * cols + pad));
    auto addr = reinterpret_cast<std::uintptr_t>(b.data());
    S* aligned = reinterpret_cast<S*>((addr + 63) & ~std::uintptr_t(63));
    return Eigen::Map<RowMajorMat<S>, Eigen::Aligned64>(aligned, rows, cols);
}

// Gathers conv patches of one image (flat [C,H,W]) into the given column
// block of a row-major lowering matrix: cols(r, col0 + p) = patch value r at
// output position p. The (oy, ox) sweep per kernel tap writes contiguously.
template <class S>
void im2col_into(const S* img, const ConvGeom& g, S* cols_data, Index stride_cols, Index col0) {
    for (Index c = 0; c < g.in_c; ++c) {
        for (Index ky = 0; ky < g.k; ++ky) {
            for (Index kx = 0; kx < g.k; ++kx) {
                const Index row = (c * g.k + ky) * g.k + kx;
                S* dst_base = cols_data + row * stride_cols + col0;
                // valid ox range: 0 <= ox*stride - pad + kx < in_w
                const Index ox_lo = std::max<Index>(0, (g.pad - kx + g.stride - 1) / g.stride);
                const Index hi_num = g.in_w - 1 + g.pad - kx;  // floor division; negative means empty
                const Index ox_hi = hi_num < 0 ? 0 : std::min<Index>(g.out_w, hi_num / g.stride + 1);
                for (Index oy = 0; oy < g.out_h; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    S* dst = dst_base + oy * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        for (Index ox = 0; ox < g.out_w; ++ox) dst[ox] = S(0);
                        continue;
                    }
                    const S* src = img + (c * g.in_h + iy) * g.in_w - g.pad + kx;
                    for (Index ox = 0; ox < ox_lo; ++ox) dst[ox] = S(0);
                    for (Index ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox * g.stride];
                    for (Index ox = ox_hi; ox < g.out_w; ++ox) dst[ox] = S(0);
                }
            }
        }
    }
}

// Scatter-adds one image's column block back (the adjoint of im2col_into).
template <class S>
void col2im_from(const S* cols_data, Index stride_cols, Index col0, const ConvGeom& g, S* img) {
    for (Index c = 0; c < g.in_c; ++c) {
        for (Index ky = 0; ky < g.k; ++ky) {
            for (Index kx = 0; kx < g.k; ++kx) {
                const Index row = (c * g.k + ky) * g.k + kx;
                const S* src_base = cols_data + row * stride_cols + col0;
                const Index ox_lo = std::max<Index>(0, (g.pad - kx + g.stride - 1) / g.stride);
                const Index hi_num = g.in_w - 1 + g.pad - kx;
                const Index ox_hi = hi_num < 0 ? 0 : std::min<Index>(g.out_w, hi_num / g.stride + 1);
                for (Index oy = 0; oy < g.out_h; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    const S* src = src_base + oy * g.out_w;
                    S* dst = img + (c * g.in_h + iy) * g.in_w - g.pad + kx;
                    for (Index ox = ox_lo; ox < ox_hi; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
        }
    }
}

// Batch chunk size bounding the stacked-column workspace to ~64 MB.
template <class S>
Index conv_chunk(Index n, Index per_image_cols_elems) {
    const Index budget = static_cast<Index>(64ll * 1024 * 1024 / sizeof(S));
    return std::max<Index>(1, std::min(n, budget / std::max<Index>(1, per_image_cols_elems)));
}

template <class S>
struct BatchView {
    Index n = 1;
    Index c = 0, h = 0, w = 0;
    bool batched = false;  // rank-4 input (vs rank-3 single image)
};

template <class S>
BatchView<S> batch_view(const Tensor<S>& x, const char* op) {
    BatchView<S> v;
    if (x.rank() == 4) {
        v.batched = true;
        v.n = x.dim(0);
        v.c = x.dim(1);
        v.h = x.dim(2);
        v.w = x.dim(3);
    } else if (x.rank() == 3) {
        v.c = x.dim(0);
        v.h = x.dim(1);
        v.w = x.dim(2);
    } else {
        throw ShapeError(std::string(op) + ": expected rank-3 or rank-4 input, got " +
                         shape_str(x.shape()));
    }
    return v;
}

}  // namespace detail

/// 2-d cross-correlation. kernels [C_out, C_in, k, k]; accepts [C,H,W] or
/// [N,C,H,W] input.
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels, Index stride, Index pad,
                 std::type_identity_t<Tape<S>*> tape = nullptr) {
    auto v = detail::batch_view(input, "conv2d");
    if (kernels.rank() != 4 || kernels.dim(1) != v.c)
        throw ShapeError("conv2d: kernels " + shape_str(kernels.shape()) + " do not match input " +
                         shape_str(input.shape()));
    if (kernels.dim(2) != kernels.dim(3)) throw ShapeError("conv2d: non-square kernel");
    const ConvGeom g = conv_geometry(v.c, v.h, v.w, kernels.dim(0), kernels.dim(2), stride, pad);

    const Index in_chw = v.c * v.h * v.w;
    const Index opos = g.out_h * g.out_w;
    const Index out_chw = g.out_c * opos;
    const Index krows = g.in_c * g.k * g.k;

    // weights as a col-major [C_out, C_in*k*k] matrix (copied once per call)
    MatX<S> W = Eigen::Map<const RowMajorMat<S>>(kernels.values().data(), g.out_c, krows);

    const Index chunk = detail::conv_chunk<S>(v.n, krows * opos);
    ArrayX<S> y(v.n * out_chw);
    auto cols = detail::scratch_mat<S>(0, krows, chunk * opos);
    auto out_block = detail::scratch_mat<S>(1, g.out_c, chunk * opos);
    for (Index i0 = 0; i0 < v.n; i0 += chunk) {
        const Index b = std::min(chunk, v.n - i0);
        for (Index i = 0; i < b; ++i)
            detail::im2col_into(input.values().data() + (i0 + i) * in_chw, g, cols.data(),
                                cols.cols(), i * opos);
        out_block.leftCols(b * opos).noalias() = W * cols.leftCols(b * opos);
        for (Index i = 0; i < b; ++i)
            Eigen::Map<RowMajorMat<S>>(y.data() + (i0 + i) * out_chw, g.out_c, opos) =
                out_block.middleCols(i * opos, opos);
    }

    std::vector<Index> out_shape = v.batched
                                       ? std::vector<Index>{v.n, g.out_c, g.out_h, g.out_w}
                                       : std::vector<Index>{g.out_c, g.out_h, g.out_w};
    bool needs = input.grad_path() || kernels.grad_path();
    Tensor<S> out = detail::make_output(std::move(out_shape), std::move(y), tape, needs, "conv2d");
    if (tape == nullptr || !needs) return out;

    Tensor<S> in_cap = input, k_cap = kernels, out_cap = out;
    tape->record([in_cap, k_cap, out_cap, g, v, in_chw, out_chw, opos, krows, chunk]() mutable {
        MatX<S> W = Eigen::Map<const RowMajorMat<S>>(k_cap.values().data(), g.out_c, krows);
        MatX<S> dW = MatX<S>::Zero(g.out_c, krows);
        auto cols = detail::scratch_mat<S>(0, krows, chunk * opos);
        auto gout = detail::scratch_mat<S>(1, g.out_c, chunk * opos);
        auto dcols = detail::scratch_mat<S>(2, krows, chunk * opos);
        for (Index i0 = 0; i0 < v.n; i0 += chunk) {
            const Index b = std::min(chunk, v.n - i0);
            for (Index i = 0; i < b; ++i)
                gout.middleCols(i * opos, opos) = Eigen::Map<const RowMajorMat<S>>(
                    out_cap.grad().data() + (i0 + i) * out_chw, g.out_c, opos);
            if (k_cap.grad_path()) {
                for (Index i = 0; i < b; ++i)
                    detail::im2col_into(in_cap.values().data() + (i0 + i) * in_chw, g, cols.data(),
                                        cols.cols(), i * opos);
                dW.noalias() += gout.leftCols(b * opos) * cols.leftCols(b * opos).transpose();
            }
            if (in_cap.grad_path()) {
                dcols.leftCols(b * opos).noalias() = W.transpose() * gout.leftCols(b * opos);
                for (Index i = 0; i < b; ++i)
                    detail::col2im_from(dcols.data(), dcols.cols(), i * opos, g,
                                        in_cap.grad().data() + (i0 + i) * in_chw);
            }
        }
        if (k_cap.grad_path())
            Eigen::Map<RowMajorMat<S>>(k_cap.grad().data(), g.out_c, krows) += dW;
    });
    return out;
}

/// Transposed convolution (exact adjoint of conv2d with the same geometry).
/// kernels [C_in, C_out, k, k]; requires k - 2*pad == stride so that the
/// output side is exactly stride * input side.
template <class S>
Tensor<S> deconv2d(const Tensor<S>& input, const Tensor<S>& kernels, Index stride, Index pad,
                   std::type_identity_t<Tape<S>*> tape = nullptr) {
    auto v = detail::batch_view(input, "deconv2d");
    if (kernels.rank() != 4 || kernels.dim(0) != v.c)
        throw ShapeError("deconv2d: kernels " + shape_str(kernels.shape()) +
                         " do not match input " + shape_str(input.shape()));
    if (kernels.dim(2) != kernels.dim(3)) throw ShapeError("deconv2d: non-square kernel");
    const Index k = kernels.dim(2);
    if (k - 2 * pad != stride)
        throw ShapeError("deconv2d: inconsistent geometry, need k - 2*pad == stride (k=" +
                         std::to_string(k) + " s=" + std::to_string(stride) +
                         " p=" + std::to_string(pad) + ")");
    const Index out_c = kernels.dim(1);
    const Index out_h = stride * v.h, out_w = stride * v.w;
    // the adjoint conv maps [out_c, out_h, out_w] -> [in_c, h, w]
    const ConvGeom g = conv_geometry(out_c, out_h, out_w, v.c, k, stride, pad);
    if (g.out_h != v.h || g.out_w != v.w) throw ShapeError("deconv2d: inconsistent geometry");

    const Index in_chw = v.c * v.h * v.w;
    const Index opos = v.h * v.w;  // adjoint-conv output positions
    const Index out_chw = out_c * out_h * out_w;
    const Index krows = g.in_c * g.k * g.k;  // out_c * k * k

    MatX<S> W = Eigen::Map<const RowMajorMat<S>>(kernels.values().data(), v.c, krows);

    const Index chunk = detail::conv_chunk<S>(v.n, krows * opos);
    ArrayX<S> y = ArrayX<S>::Zero(v.n * out_chw);
    auto x_blk = detail::scratch_mat<S>(0, v.c, chunk * opos);
    auto cols = detail::scratch_mat<S>(1, krows, chunk * opos);
    for (Index i0 = 0; i0 < v.n; i0 += chunk) {
        const Index b = std::min(chunk, v.n - i0);
        for (Index i = 0; i < b; ++i)
            x_blk.middleCols(i * opos, opos) = Eigen::Map<const RowMajorMat<S>>(
                input.values().data() + (i0 + i) * in_chw, v.c, opos);
        cols.leftCols(b * opos).noalias() = W.transpose() * x_blk.leftCols(b * opos);
        for (Index i = 0; i < b; ++i)
            detail::col2im_from(cols.data(), cols.cols(), i * opos, g, y.data() + (i0 + i) * out_chw);
    }

    std::vector<Index> out_shape = v.batched ? std::vector<Index>{v.n, out_c, out_h, out_w}
                                             : std::vector<Index>{out_c, out_h, out_w};
    bool needs = input.grad_path() || kernels.grad_path();
    Tensor<S> out = detail::make_output(std::move(out_shape), std::move(y), tape, needs, "deconv2d");
    if (tape == nullptr || !needs) return out;

    Tensor<S> in_cap = input, k_cap = kernels, out_cap = out;
    tape->record([in_cap, k_cap, out_cap, g, v, in_chw, out_chw, opos, krows, chunk]() mutable {
        MatX<S> W = Eigen::Map<const RowMajorMat<S>>(k_cap.values().data(), v.c, krows);
        MatX<S> dW = MatX<S>::Zero(v.c, krows);
        auto gcols = detail::scratch_mat<S>(0, krows, chunk * opos);
        auto dx_blk = detail::scratch_mat<S>(1, v.c, chunk * opos);
        auto x_blk = detail::scratch_mat<S>(2, v.c, chunk * opos);
        for (Index i0 = 0; i0 < v.n; i0 += chunk) {
            const Index b = std::min(chunk, v.n - i0);
            for (Index i = 0; i < b; ++i)
                detail::im2col_into(out_cap.grad().data() + (i0 + i) * out_chw, g, gcols.data(),
                                    gcols.cols(), i * opos);
            if (in_cap.grad_path()) {
                dx_blk.leftCols(b * opos).noalias() = W * gcols.leftCols(b * opos);
                for (Index i = 0; i < b; ++i)
                    Eigen::Map<RowMajorMat<S>>(in_cap.grad().data() + (i0 + i) * in_chw, v.c,
                                               opos) += dx_blk.middleCols(i * opos, opos);
            }
            if (k_cap.grad_path()) {
                for (Index i = 0; i < b; ++i)
                    x_blk.middleCols(i * opos, opos) = Eigen::Map<const RowMajorMat<S>>(
                        in_cap.values().data() + (i0 + i) * in_chw, v.c, opos);
                dW.noalias() += x_blk.leftCols(b * opos) * gcols.leftCols(b * opos).transpose();
            }
        }
        if (k_cap.grad_path()) Eigen::Map<RowMajorMat<S>>(k_cap.grad().data(), v.c, krows) += dW;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Running statistics owned by a BN layer. Updated in training mode, read in
/// inference mode.
template <class S>
struct BnStats {
    ArrayX<S> mean;
    ArrayX<S> var;

    static BnStats make(Index channels) {
        BnStats s;
        s.mean = ArrayX<S>::Zero(channels);
        s.var = ArrayX<S>::Ones(channels);
        return s;
    }
};

/// Batch normalization over a rank-2 [N,F] (per feature) or rank-4 [N,C,H,W]
/// (per channel) tensor. Training mode normalizes by batch statistics and
/// updates `running` with momentum; inference mode normalizes by `running`.
template <class S>
Tensor<S> batch_norm(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                     BnStats<S>& running, bool training, std::type_identity_t<Tape<S>*> tape = nullptr,
                     S eps = S(1e-5), S momentum = S(0.9)) {
    Index channels, group;  // group = elements normalized together per channel
    Index N, hw;
    if (input.rank() == 2) {
        N = input.dim(0);
        channels = input.dim(1);
        hw = 1;
    } else if (input.rank() == 4) {
        N = input.dim(0);
        channels = input.dim(1);
        hw = input.dim(2) * input.dim(3);
    } else {
        throw ShapeError("batch_norm: expected rank-2 or rank-4, got " + shape_str(input.shape()));
    }
    group = N * hw;
    if (gamma.size() != channels || beta.size() != channels || running.mean.size() != channels)
        throw ShapeError("batch_norm: gamma/beta/running size mismatch");
    if (training && N < 2) throw ShapeError("batch_norm: training mode needs batch >= 2");

    // per-channel moments, accumulated in double
    ArrayX<S> mu(channels), inv_std(channels);
    if (training) {
        for (Index c = 0; c < channels; ++c) {
            double s = 0.0, s2 = 0.0;
            for (Index n = 0; n < N; ++n) {
                const S* p = input.values().data() + (n * channels + c) * hw;
                for (Index i = 0; i < hw; ++i) {
                    const double v = static_cast<double>(p[i]);
                    s += v;
                    s2 += v * v;
                }
            }
            const double m = s / static_cast<double>(group);
            const double var = std::max(0.0, s2 / static_cast<double>(group) - m * m);
            mu[c] = static_cast<S>(m);
            inv_std[c] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            running.mean[c] = momentum * running.mean[c] + (S(1) - momentum) * static_cast<S>(m);
            running.var[c] = momentum * running.var[c] + (S(1) - momentum) * static_cast<S>(var);
        }
    } else {
        mu = running.mean;
        inv_std = (running.var + eps).sqrt().inverse();
    }

    ArrayX<S> xhat(input.size());
    ArrayX<S> y(input.size());
    for (Index n = 0; n < N; ++n) {
        for (Index c = 0; c < channels; ++c) {
            const Index off = (n * channels + c) * hw;
            xhat.segment(off, hw) = (input.values().segment(off, hw) - mu[c]) * inv_std[c];
            y.segment(off, hw) = gamma.values()[c] * xhat.segment(off, hw) + beta.values()[c];
        }
    }

    bool needs = input.grad_path() || gamma.grad_path() || beta.grad_path();
    Tensor<S> out = detail::make_output(input.shape(), std::move(y), tape, needs, "batch_norm");
    if (tape == nullptr || !needs) return out;

    Tensor<S> in_cap = input, g_cap = gamma, b_cap = beta, out_cap = out;
    auto xhat_ptr = std::make_shared<ArrayX<S>>(std::move(xhat));
    tape->record([in_cap, g_cap, b_cap, out_cap, xhat_ptr, inv_std, N, channels, hw, group,
                  training]() mutable {
        const ArrayX<S>& xh = *xhat_ptr;
        for (Index c = 0; c < channels; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (Index n = 0; n < N; ++n) {
                const Index off = (n * channels + c) * hw;
                auto dy = out_cap.grad().segment(off, hw).template cast<double>();
                auto xhc = xh.segment(off, hw).template cast<double>();
                sum_dy += dy.sum();
                sum_dy_xh += (dy * xhc).sum();
            }
            if (g_cap.grad_path()) g_cap.grad()[c] += static_cast<S>(sum_dy_xh);
            if (b_cap.grad_path()) b_cap.grad()[c] += static_cast<S>(sum_dy);
            if (in_cap.grad_path()) {
                const S gam_is = g_cap.values()[c] * inv_std[c];
                if (training) {
                    const S m_dy = static_cast<S>(sum_dy / static_cast<double>(group));
                    const S m_dy_xh = static_cast<S>(sum_dy_xh / static_cast<double>(group));
                    for (Index n = 0; n < N; ++n) {
                        const Index off = (n * channels + c) * hw;
                        in_cap.grad().segment(off, hw) +=
                            gam_is * (out_cap.grad().segment(off, hw) - m_dy -
                                      xh.segment(off, hw) * m_dy_xh);
                    }
                } else {
                    for (Index n = 0; n < N; ++n) {
                        const Index off = (n * channels + c) * hw;
                        in_cap.grad().segment(off, hw) += gam_is * out_cap.grad().segment(off, hw);
                    }
                }
            }
        }
    });
    return out;
}

}  // namespace invdes
