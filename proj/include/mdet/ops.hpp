#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mdet/tensor.hpp"

namespace mdet {

// Scalar compute kernels. Forward/backward pairs are hand-written and checked
// against central finite differences in the tests; keep both sides of each
// pair in sync when touching the index math.

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// x: [Cin,H,W], w: [Cout,Cin,Kh,Kw], b: [Cout]. Cross-correlation with
// independent per-axis strides and symmetric zero padding.
inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                             int stride_h, int stride_w, int pad) {
    if (x.shape.size() != 3 || w.shape.size() != 4 || b.shape.size() != 1)
        throw std::invalid_argument("conv2d: expected x[C,H,W], w[O,I,Kh,Kw], b[O]");
    if (x.dim(0) != w.dim(1))
        throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(0)) +
                                    " != weight channels " + std::to_string(w.dim(1)));
    if (w.dim(0) != b.dim(0))
        throw std::invalid_argument("conv2d: bias size mismatch");
    if (stride_h < 1 || stride_w < 1)
        throw std::invalid_argument("conv2d: strides must be >= 1");

    const int ci = x.dim(0), ih = x.dim(1), iw = x.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = conv_out_extent(ih, kh, stride_h, pad);
    const int ow = conv_out_extent(iw, kw, stride_w, pad);
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: empty output");

    Tensor y({co, oh, ow});
    for (int oc = 0; oc < co; ++oc) {
        const double bias = b.v[oc];
        for (int oy = 0; oy < oh; ++oy) {
            const int y0 = oy * stride_h - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int x0 = ox * stride_w - pad;
                double acc = bias;
                for (int ic = 0; ic < ci; ++ic) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int sy = y0 + ky;
                        if (sy < 0 || sy >= ih) continue;
                        const double* xrow = &x.v[(static_cast<size_t>(ic) * ih + sy) * iw];
                        const double* wrow = &w.v[((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw];
                        for (int kx = 0; kx < kw; ++kx) {
                            const int sx = x0 + kx;
                            if (sx < 0 || sx >= iw) continue;
                            acc += xrow[sx] * wrow[kx];
                        }
                    }
                }
                y.at(oc, oy, ox) = acc;
            }
        }
    }
    return y;
}

// Accumulates into the provided grad tensors; pass nullptr to skip a term.
inline void conv2d_backward(const Tensor& x, const Tensor& w, int stride_h, int stride_w, int pad,
                            const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb) {
    const int ci = x.dim(0), ih = x.dim(1), iw = x.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = gy.dim(1), ow = gy.dim(2);

    for (int oc = 0; oc < co; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
            const int y0 = oy * stride_h - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int x0 = ox * stride_w - pad;
                const double g = gy.at(oc, oy, ox);
                if (gb) gb->v[oc] += g;
                for (int ic = 0; ic < ci; ++ic) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int sy = y0 + ky;
                        if (sy < 0 || sy >= ih) continue;
                        const double* xrow = &x.v[(static_cast<size_t>(ic) * ih + sy) * iw];
                        double* gxrow = gx ? &gx->v[(static_cast<size_t>(ic) * ih + sy) * iw] : nullptr;
                        const double* wrow = &w.v[((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw];
                        double* gwrow = gw ? &gw->v[((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw] : nullptr;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int sx = x0 + kx;
                            if (sx < 0 || sx >= iw) continue;
                            if (gwrow) gwrow[kx] += g * xrow[sx];
                            if (gxrow) gxrow[sx] += g * wrow[kx];
                        }
                    }
                }
            }
        }
    }
}

inline Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& e : y.v) e = e > 0.0 ? e : 0.0;
    return y;
}

inline void relu_backward(const Tensor& x, const Tensor& gy, Tensor* gx) {
    for (int i = 0; i < x.numel(); ++i)
        if (x.v[i] > 0.0) gx->v[i] += gy.v[i];
}

inline Tensor sigmoid_forward(const Tensor& x) {
    Tensor y = x;
    for (double& e : y.v) e = 1.0 / (1.0 + std::exp(-e));
    return y;
}

inline void sigmoid_backward(const Tensor& y, const Tensor& gy, Tensor* gx) {
    for (int i = 0; i < y.numel(); ++i)
        gx->v[i] += gy.v[i] * y.v[i] * (1.0 - y.v[i]);
}

inline Tensor add_forward(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor y = a;
    for (int i = 0; i < y.numel(); ++i) y.v[i] += b.v[i];
    return y;
}

// 3x3 max pool, stride 1, same padding. Used by the decode peak filter.
inline Tensor max_pool3x3_same(const Tensor& x) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double m = x.at(ch, i, j);
                for (int di = -1; di <= 1; ++di) {
                    const int si = i + di;
                    if (si < 0 || si >= h) continue;
                    for (int dj = -1; dj <= 1; ++dj) {
                        const int sj = j + dj;
                        if (sj < 0 || sj >= w) continue;
                        m = std::max(m, x.at(ch, si, sj));
                    }
                }
                y.at(ch, i, j) = m;
            }
    return y;
}

// Bilinear resize with pixel-center alignment; used for image-space scaling
// (augmentation, inference resizing). Not differentiated.
inline Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    const int c = x.dim(0), ih = x.dim(1), iw = x.dim(2);
    if (out_h == ih && out_w == iw) return x;
    Tensor y({c, out_h, out_w});
    const double sy = static_cast<double>(ih) / out_h;
    const double sx = static_cast<double>(iw) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(ih - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, ih - 1);
        const double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(iw - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, iw - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double a = x.at(ch, y0, x0) * (1 - wx) + x.at(ch, y0, x1) * wx;
                const double b = x.at(ch, y1, x0) * (1 - wx) + x.at(ch, y1, x1) * wx;
                y.at(ch, i, j) = a * (1 - wy) + b * wy;
            }
        }
    }
    return y;
}

// Zero-pad on the right/bottom only, preserving the origin.
inline Tensor pad_bottom_right(const Tensor& x, int out_h, int out_w) {
    const int c = x.dim(0), ih = x.dim(1), iw = x.dim(2);
    if (out_h == ih && out_w == iw) return x;
    Tensor y({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < ih; ++i)
            for (int j = 0; j < iw; ++j) y.at(ch, i, j) = x.at(ch, i, j);
    return y;
}

inline Tensor flip_horizontal(const Tensor& x) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) y.at(ch, i, j) = x.at(ch, i, w - 1 - j);
    return y;
}

}  // namespace mdet
