#pragma once

#include <algorithm>
#include <cmath>

#include "mp/tensor.hpp"

namespace mp {

enum class ResizeMode { nearest, bilinear };

namespace ops {

inline void check_rank4(const Tensor& t, const char* op, const char* arg) {
    if (t.rank() != 4)
        throw ContractError(std::string(op) + ": " + arg + " must be rank 4, got " +
                            t.shape_str());
}

// ---- conv2d ---------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride,
                     int padding) {
    check_rank4(x, "conv2d", "input");
    check_rank4(k, "conv2d", "kernel");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != Cin)
        throw ContractError("conv2d: channel axis mismatch, input Cin=" + std::to_string(Cin) +
                            " kernel Cin=" + std::to_string(k.dim(1)));
    if (bias.rank() != 1 || bias.dim(0) != Cout)
        throw ContractError("conv2d: bias axis must be [Cout]=" + std::to_string(Cout) +
                            ", got " + bias.shape_str());
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw ContractError("conv2d: kernel larger than padded input on spatial axes");
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    Tensor y({B, Cout, Ho, Wo});
    for (int n = 0; n < B; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    float acc = bias.data[static_cast<size_t>(co)];
                    const int h0 = oh * stride - padding;
                    const int w0 = ow * stride - padding;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int r = 0; r < kh; ++r) {
                            const int ih = h0 + r;
                            if (ih < 0 || ih >= H) continue;
                            for (int c = 0; c < kw; ++c) {
                                const int iw = w0 + c;
                                if (iw < 0 || iw >= W) continue;
                                acc += x.at(n, ci, ih, iw) * k.at(co, ci, r, c);
                            }
                        }
                    y.at(n, co, oh, ow) = acc;
                }
    return y;
}

inline void conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& gout, int stride,
                            int padding, Tensor* gx, Tensor* gk, Tensor* gbias) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const int Ho = gout.dim(2), Wo = gout.dim(3);
    for (int n = 0; n < B; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    const float g = gout.at(n, co, oh, ow);
                    if (gbias) gbias->data[static_cast<size_t>(co)] += g;
                    const int h0 = oh * stride - padding;
                    const int w0 = ow * stride - padding;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int r = 0; r < kh; ++r) {
                            const int ih = h0 + r;
                            if (ih < 0 || ih >= H) continue;
                            for (int c = 0; c < kw; ++c) {
                                const int iw = w0 + c;
                                if (iw < 0 || iw >= W) continue;
                                if (gx) gx->at(n, ci, ih, iw) += g * k.at(co, ci, r, c);
                                if (gk) gk->at(co, ci, r, c) += g * x.at(n, ci, ih, iw);
                            }
                        }
                }
}

// ---- grid_sample ----------------------------------------------------------
//
// grid is [B,Hg,Wg,2] with (x,y) in normalized coordinates: (-1,-1) is the
// center of the top-left pixel, (+1,+1) the center of the bottom-right one.
// Out-of-range coordinates clamp to the border pixel. Fractional weights
// within 1e-4 of an integer snap so identity grids reproduce pixels exactly
// despite float32 rounding of the grid values themselves.

struct BilinearTap {
    int i0, i1;
    float frac;  // weight of i1
};

inline BilinearTap sample_axis(float gcoord, int extent) {
    double pix = (static_cast<double>(gcoord) + 1.0) * 0.5 * (extent - 1);
    if (pix < 0.0) pix = 0.0;
    if (pix > extent - 1) pix = static_cast<double>(extent - 1);
    int i0 = static_cast<int>(std::floor(pix));
    if (i0 > extent - 2) i0 = extent - 2;
    if (i0 < 0) i0 = 0;
    float f = static_cast<float>(pix - i0);
    if (f < 1e-4f) f = 0.f;
    if (f > 1.f - 1e-4f) f = 1.f;
    return {i0, extent > 1 ? i0 + 1 : i0, f};
}

inline Tensor grid_sample(const Tensor& img, const Tensor& grid) {
    check_rank4(img, "grid_sample", "image");
    check_rank4(grid, "grid_sample", "grid");
    if (grid.dim(3) != 2)
        throw ContractError("grid_sample: grid last axis must be 2, got " + grid.shape_str());
    if (grid.dim(0) != img.dim(0))
        throw ContractError("grid_sample: batch axis mismatch");
    const int B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    const int Ho = grid.dim(1), Wo = grid.dim(2);
    Tensor y({B, C, Ho, Wo});
    for (int n = 0; n < B; ++n)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                const float gx = grid.data[static_cast<size_t>(((n * Ho + oh) * Wo + ow) * 2)];
                const float gy =
                    grid.data[static_cast<size_t>(((n * Ho + oh) * Wo + ow) * 2 + 1)];
                BilinearTap tx = sample_axis(gx, W);
                BilinearTap ty = sample_axis(gy, H);
                const float w00 = (1 - ty.frac) * (1 - tx.frac);
                const float w01 = (1 - ty.frac) * tx.frac;
                const float w10 = ty.frac * (1 - tx.frac);
                const float w11 = ty.frac * tx.frac;
                for (int c = 0; c < C; ++c) {
                    float v;
                    if (tx.frac == 0.f && ty.frac == 0.f) {
                        v = img.at(n, c, ty.i0, tx.i0);  // exact pixel hit
                    } else {
                        v = w00 * img.at(n, c, ty.i0, tx.i0) + w01 * img.at(n, c, ty.i0, tx.i1) +
                            w10 * img.at(n, c, ty.i1, tx.i0) + w11 * img.at(n, c, ty.i1, tx.i1);
                    }
                    y.at(n, c, oh, ow) = v;
                }
            }
    return y;
}

inline void grid_sample_backward(const Tensor& img, const Tensor& grid, const Tensor& gout,
                                 Tensor* gimg, Tensor* ggrid) {
    const int B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    const int Ho = grid.dim(1), Wo = grid.dim(2);
    for (int n = 0; n < B; ++n)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                const size_t gidx = static_cast<size_t>(((n * Ho + oh) * Wo + ow) * 2);
                BilinearTap tx = sample_axis(grid.data[gidx], W);
                BilinearTap ty = sample_axis(grid.data[gidx + 1], H);
                float dgx = 0.f, dgy = 0.f;
                for (int c = 0; c < C; ++c) {
                    const float g = gout.at(n, c, oh, ow);
                    if (gimg) {
                        gimg->at(n, c, ty.i0, tx.i0) += g * (1 - ty.frac) * (1 - tx.frac);
                        gimg->at(n, c, ty.i0, tx.i1) += g * (1 - ty.frac) * tx.frac;
                        gimg->at(n, c, ty.i1, tx.i0) += g * ty.frac * (1 - tx.frac);
                        gimg->at(n, c, ty.i1, tx.i1) += g * ty.frac * tx.frac;
                    }
                    if (ggrid) {
                        const float v00 = img.at(n, c, ty.i0, tx.i0);
                        const float v01 = img.at(n, c, ty.i0, tx.i1);
                        const float v10 = img.at(n, c, ty.i1, tx.i0);
                        const float v11 = img.at(n, c, ty.i1, tx.i1);
                        // d value / d frac, then chain to normalized coords
                        const float dvdfx = (1 - ty.frac) * (v01 - v00) + ty.frac * (v11 - v10);
                        const float dvdfy = (1 - tx.frac) * (v10 - v00) + tx.frac * (v11 - v01);
                        dgx += g * dvdfx;
                        dgy += g * dvdfy;
                    }
                }
                if (ggrid) {
                    // frac/normalized-coord scale; zero outside the image (clamped)
                    double px = (static_cast<double>(grid.data[gidx]) + 1.0) * 0.5 * (W - 1);
                    double py = (static_cast<double>(grid.data[gidx + 1]) + 1.0) * 0.5 * (H - 1);
                    const float sx = (px <= 0.0 || px >= W - 1) ? 0.f : 0.5f * (W - 1);
                    const float sy = (py <= 0.0 || py >= H - 1) ? 0.f : 0.5f * (H - 1);
                    ggrid->data[gidx] += dgx * sx;
                    ggrid->data[gidx + 1] += dgy * sy;
                }
            }
}

// ---- resize (align-corners-false) -----------------------------------------

inline Tensor resize(const Tensor& x, int out_h, int out_w, ResizeMode mode) {
    check_rank4(x, "resize", "input");
    if (out_h < 1 || out_w < 1) throw ContractError("resize: output extents must be >= 1");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({B, C, out_h, out_w});
    const double sh = static_cast<double>(H) / out_h;
    const double sw = static_cast<double>(W) / out_w;
    for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
            const double srcy = (oh + 0.5) * sh - 0.5;
            const double srcx = (ow + 0.5) * sw - 0.5;
            if (mode == ResizeMode::nearest) {
                int ih = static_cast<int>(std::floor(srcy + 0.5));
                int iw = static_cast<int>(std::floor(srcx + 0.5));
                ih = std::clamp(ih, 0, H - 1);
                iw = std::clamp(iw, 0, W - 1);
                for (int n = 0; n < B; ++n)
                    for (int c = 0; c < C; ++c) y.at(n, c, oh, ow) = x.at(n, c, ih, iw);
            } else {
                double cy = std::clamp(srcy, 0.0, static_cast<double>(H - 1));
                double cx = std::clamp(srcx, 0.0, static_cast<double>(W - 1));
                int y0 = std::min(static_cast<int>(std::floor(cy)), H > 1 ? H - 2 : 0);
                int x0 = std::min(static_cast<int>(std::floor(cx)), W > 1 ? W - 2 : 0);
                const float fy = static_cast<float>(cy - y0);
                const float fx = static_cast<float>(cx - x0);
                const int y1 = H > 1 ? y0 + 1 : y0;
                const int x1 = W > 1 ? x0 + 1 : x0;
                for (int n = 0; n < B; ++n)
                    for (int c = 0; c < C; ++c)
                        y.at(n, c, oh, ow) = (1 - fy) * (1 - fx) * x.at(n, c, y0, x0) +
                                             (1 - fy) * fx * x.at(n, c, y0, x1) +
                                             fy * (1 - fx) * x.at(n, c, y1, x0) +
                                             fy * fx * x.at(n, c, y1, x1);
            }
        }
    return y;
}

inline void resize_backward(const Tensor& x, const Tensor& gout, ResizeMode mode, Tensor* gx) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int out_h = gout.dim(2), out_w = gout.dim(3);
    const double sh = static_cast<double>(H) / out_h;
    const double sw = static_cast<double>(W) / out_w;
    for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
            const double srcy = (oh + 0.5) * sh - 0.5;
            const double srcx = (ow + 0.5) * sw - 0.5;
            if (mode == ResizeMode::nearest) {
                int ih = std::clamp(static_cast<int>(std::floor(srcy + 0.5)), 0, H - 1);
                int iw = std::clamp(static_cast<int>(std::floor(srcx + 0.5)), 0, W - 1);
                for (int n = 0; n < B; ++n)
                    for (int c = 0; c < C; ++c) gx->at(n, c, ih, iw) += gout.at(n, c, oh, ow);
            } else {
                double cy = std::clamp(srcy, 0.0, static_cast<double>(H - 1));
                double cx = std::clamp(srcx, 0.0, static_cast<double>(W - 1));
                int y0 = std::min(static_cast<int>(std::floor(cy)), H > 1 ? H - 2 : 0);
                int x0 = std::min(static_cast<int>(std::floor(cx)), W > 1 ? W - 2 : 0);
                const float fy = static_cast<float>(cy - y0);
                const float fx = static_cast<float>(cx - x0);
                const int y1 = H > 1 ? y0 + 1 : y0;
                const int x1 = W > 1 ? x0 + 1 : x0;
                for (int n = 0; n < B; ++n)
                    for (int c = 0; c < C; ++c) {
                        const float g = gout.at(n, c, oh, ow);
                        gx->at(n, c, y0, x0) += g * (1 - fy) * (1 - fx);
                        gx->at(n, c, y0, x1) += g * (1 - fy) * fx;
                        gx->at(n, c, y1, x0) += g * fy * (1 - fx);
                        gx->at(n, c, y1, x1) += g * fy * fx;
                    }
            }
        }
}

// ---- softmax over the channel axis ----------------------------------------

inline Tensor softmax_channels(const Tensor& x) {
    check_rank4(x, "softmax_channels", "input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y(x.shape);
    for (int n = 0; n < B; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                float m = x.at(n, 0, h, w);
                for (int c = 1; c < C; ++c) m = std::max(m, x.at(n, c, h, w));
                float s = 0.f;
                for (int c = 0; c < C; ++c) {
                    const float e = std::exp(x.at(n, c, h, w) - m);
                    y.at(n, c, h, w) = e;
                    s += e;
                }
                for (int c = 0; c < C; ++c) y.at(n, c, h, w) /= s;
            }
    return y;
}

inline void softmax_channels_backward(const Tensor& y, const Tensor& gout, Tensor* gx) {
    const int B = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
    for (int n = 0; n < B; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                float dot = 0.f;
                for (int c = 0; c < C; ++c) dot += gout.at(n, c, h, w) * y.at(n, c, h, w);
                for (int c = 0; c < C; ++c)
                    gx->at(n, c, h, w) += y.at(n, c, h, w) * (gout.at(n, c, h, w) - dot);
            }
}

// ---- fully connected -------------------------------------------------------

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.rank() != 2 || w.rank() != 2)
        throw ContractError("linear: x and w must be rank 2");
    const int N = x.dim(0), I = x.dim(1), O = w.dim(0);
    if (w.dim(1) != I)
        throw ContractError("linear: input axis mismatch, x has " + std::to_string(I) +
                            " features, w expects " + std::to_string(w.dim(1)));
    if (bias.rank() != 1 || bias.dim(0) != O) throw ContractError("linear: bad bias shape");
    Tensor y({N, O});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            float acc = bias.data[static_cast<size_t>(o)];
            for (int i = 0; i < I; ++i)
                acc += x.data[static_cast<size_t>(n * I + i)] *
                       w.data[static_cast<size_t>(o * I + i)];
            y.data[static_cast<size_t>(n * O + o)] = acc;
        }
    return y;
}

inline void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* gx,
                            Tensor* gw, Tensor* gbias) {
    const int N = x.dim(0), I = x.dim(1), O = w.dim(0);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const float g = gout.data[static_cast<size_t>(n * O + o)];
            if (gbias) gbias->data[static_cast<size_t>(o)] += g;
            for (int i = 0; i < I; ++i) {
                if (gx)
                    gx->data[static_cast<size_t>(n * I + i)] +=
                        g * w.data[static_cast<size_t>(o * I + i)];
                if (gw)
                    gw->data[static_cast<size_t>(o * I + i)] +=
                        g * x.data[static_cast<size_t>(n * I + i)];
            }
        }
}

// Identity sampling grid as [1,h,w,2] in normalized coordinates.
inline Tensor identity_grid(int h, int w) {
    Tensor g({1, h, w, 2});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            g.data[static_cast<size_t>((y * w + x) * 2)] =
                w > 1 ? -1.f + 2.f * x / (w - 1) : 0.f;
            g.data[static_cast<size_t>((y * w + x) * 2 + 1)] =
                h > 1 ? -1.f + 2.f * y / (h - 1) : 0.f;
        }
    return g;
}

}  // namespace ops
}  // namespace mp
