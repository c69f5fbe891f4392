#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mp/ops.hpp"
#include "mp/tps.hpp"

namespace mp {

// Reverse-mode gradient tape. Nodes are appended in execution order, which is
// a topological order by construction; backward() walks it in reverse.
// Operations return integer tensor ids into the tape.
class Tape {
  public:
    using Id = int;

    Id put(Tensor t, bool requires_grad = false) {
        t.requires_grad = requires_grad;
        nodes_.push_back(Node{std::move(t), requires_grad, {}, nullptr});
        return static_cast<Id>(nodes_.size() - 1);
    }

    const Tensor& val(Id id) const { return node(id).value; }
    int64_t num_nodes() const { return static_cast<int64_t>(nodes_.size()); }

    // ---- elementwise -------------------------------------------------------

    Id add(Id a, Id b) {
        check_same_shape(val(a), val(b), "add");
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = val(a).data[i] + val(b).data[i];
        return record(std::move(y), {a, b}, [](Ctx c) {
            c.accumulate(0, c.gout);
            c.accumulate(1, c.gout);
        });
    }

    Id sub(Id a, Id b) {
        check_same_shape(val(a), val(b), "sub");
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = val(a).data[i] - val(b).data[i];
        return record(std::move(y), {a, b}, [](Ctx c) {
            c.accumulate(0, c.gout);
            Tensor g = c.gout;
            for (auto& v : g.data) v = -v;
            c.accumulate(1, g);
        });
    }

    // Elementwise product. One operand may have a single channel broadcast
    // across the other's channels (rank-4 only).
    Id mul(Id a, Id b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.same_shape(tb)) {
            Tensor y(ta.shape);
            for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = ta.data[i] * tb.data[i];
            return record(std::move(y), {a, b}, [this, a, b](Ctx c) {
                if (c.needs(0)) {
                    Tensor g(c.gout.shape);
                    for (size_t i = 0; i < g.data.size(); ++i)
                        g.data[i] = c.gout.data[i] * val(b).data[i];
                    c.accumulate(0, g);
                }
                if (c.needs(1)) {
                    Tensor g(c.gout.shape);
                    for (size_t i = 0; i < g.data.size(); ++i)
                        g.data[i] = c.gout.data[i] * val(a).data[i];
                    c.accumulate(1, g);
                }
            });
        }
        // broadcast: put the single-channel operand first
        if (ta.rank() == 4 && tb.rank() == 4 && tb.dim(1) == 1 && ta.dim(0) == tb.dim(0) &&
            ta.dim(2) == tb.dim(2) && ta.dim(3) == tb.dim(3))
            return mul_bcast(b, a);
        if (ta.rank() == 4 && tb.rank() == 4 && ta.dim(1) == 1 && ta.dim(0) == tb.dim(0) &&
            ta.dim(2) == tb.dim(2) && ta.dim(3) == tb.dim(3))
            return mul_bcast(a, b);
        throw ContractError("mul: incompatible shapes " + ta.shape_str() + " vs " +
                            tb.shape_str());
    }

    Id scale(Id a, float s) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = val(a).data[i] * s;
        return record(std::move(y), {a}, [s](Ctx c) {
            Tensor g = c.gout;
            for (auto& v : g.data) v *= s;
            c.accumulate(0, g);
        });
    }

    Id add_scalar(Id a, float s) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = val(a).data[i] + s;
        return record(std::move(y), {a}, [](Ctx c) { c.accumulate(0, c.gout); });
    }

    Id relu(Id a) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = std::max(0.f, val(a).data[i]);
        return record(std::move(y), {a}, [this, a](Ctx c) {
            Tensor g(c.gout.shape);
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = val(a).data[i] > 0.f ? c.gout.data[i] : 0.f;
            c.accumulate(0, g);
        });
    }

    Id sigmoid(Id a) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i)
            y.data[i] = 1.f / (1.f + std::exp(-val(a).data[i]));
        Id out = record(std::move(y), {a}, nullptr);
        node(out).backprop = [this, out](Ctx c) {
            const Tensor& s = val(out);
            Tensor g(c.gout.shape);
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = c.gout.data[i] * s.data[i] * (1.f - s.data[i]);
            c.accumulate(0, g);
        };
        return out;
    }

    Id abs(Id a) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = std::fabs(val(a).data[i]);
        return record(std::move(y), {a}, [this, a](Ctx c) {
            Tensor g(c.gout.shape);
            for (size_t i = 0; i < g.data.size(); ++i) {
                const float x = val(a).data[i];
                g.data[i] = x > 0.f ? c.gout.data[i] : (x < 0.f ? -c.gout.data[i] : 0.f);
            }
            c.accumulate(0, g);
        });
    }

    Id sqrt_op(Id a) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = std::sqrt(val(a).data[i]);
        Id out = record(std::move(y), {a}, nullptr);
        node(out).backprop = [this, out](Ctx c) {
            const Tensor& s = val(out);
            Tensor g(c.gout.shape);
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = c.gout.data[i] / (2.f * std::max(s.data[i], 1e-8f));
            c.accumulate(0, g);
        };
        return out;
    }

    Id clamp(Id a, float lo, float hi) {
        Tensor y(val(a).shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = clampf(val(a).data[i], lo, hi);
        return record(std::move(y), {a}, [this, a, lo, hi](Ctx c) {
            Tensor g(c.gout.shape);
            for (size_t i = 0; i < g.data.size(); ++i) {
                const float x = val(a).data[i];
                g.data[i] = (x >= lo && x <= hi) ? c.gout.data[i] : 0.f;
            }
            c.accumulate(0, g);
        });
    }

    // ---- reductions ---------------------------------------------------------

    Id sum(Id a) {
        float acc = 0.f;
        for (float v : val(a).data) acc += v;
        return record(Tensor({1}, {acc}), {a}, [this, a](Ctx c) {
            Tensor g(val(a).shape, c.gout.data[0]);
            c.accumulate(0, g);
        });
    }

    Id mean(Id a) {
        const float inv = 1.f / static_cast<float>(val(a).size());
        float acc = 0.f;
        for (float v : val(a).data) acc += v;
        return record(Tensor({1}, {acc * inv}), {a}, [this, a, inv](Ctx c) {
            Tensor g(val(a).shape, c.gout.data[0] * inv);
            c.accumulate(0, g);
        });
    }

    // [N,M] -> [N,1], sum over the second axis
    Id row_sum(Id a) {
        const Tensor& x = val(a);
        require(x.rank() == 2, "row_sum: input must be rank 2");
        const int N = x.dim(0), M = x.dim(1);
        Tensor y({N, 1});
        for (int n = 0; n < N; ++n) {
            float acc = 0.f;
            for (int m = 0; m < M; ++m) acc += x.data[static_cast<size_t>(n * M + m)];
            y.data[static_cast<size_t>(n)] = acc;
        }
        return record(std::move(y), {a}, [N, M](Ctx c) {
            Tensor g({N, M});
            for (int n = 0; n < N; ++n)
                for (int m = 0; m < M; ++m)
                    g.data[static_cast<size_t>(n * M + m)] = c.gout.data[static_cast<size_t>(n)];
            c.accumulate(0, g);
        });
    }

    // ---- shape plumbing ------------------------------------------------------

    Id reshape(Id a, std::vector<int> shape) {
        Tensor y(std::move(shape), val(a).data);
        if (y.size() != val(a).size()) throw ContractError("reshape: element count changed");
        return record(std::move(y), {a}, [this, a](Ctx c) {
            Tensor g(val(a).shape, c.gout.data);
            c.accumulate(0, g);
        });
    }

    Id concat_channels(const std::vector<Id>& parts) {
        require(!parts.empty(), "concat_channels: empty input list");
        const Tensor& first = val(parts[0]);
        require(first.rank() == 4, "concat_channels: inputs must be rank 4");
        int ctot = 0;
        for (Id p : parts) {
            const Tensor& t = val(p);
            require(t.rank() == 4 && t.dim(0) == first.dim(0) && t.dim(2) == first.dim(2) &&
                        t.dim(3) == first.dim(3),
                    "concat_channels: spatial/batch shape mismatch");
            ctot += t.dim(1);
        }
        const int B = first.dim(0), H = first.dim(2), W = first.dim(3);
        Tensor y({B, ctot, H, W});
        int coff = 0;
        for (Id p : parts) {
            const Tensor& t = val(p);
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < t.dim(1); ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            y.at(n, coff + c, h, w) = t.at(n, c, h, w);
            coff += t.dim(1);
        }
        std::vector<int> chans;
        for (Id p : parts) chans.push_back(val(p).dim(1));
        return record(std::move(y), parts, [chans, B, H, W](Ctx c) {
            int off = 0;
            for (size_t i = 0; i < chans.size(); ++i) {
                if (c.needs(static_cast<int>(i))) {
                    Tensor g({B, chans[i], H, W});
                    for (int n = 0; n < B; ++n)
                        for (int ch = 0; ch < chans[i]; ++ch)
                            for (int h = 0; h < H; ++h)
                                for (int w = 0; w < W; ++w)
                                    g.at(n, ch, h, w) = c.gout.at(n, off + ch, h, w);
                    c.accumulate(static_cast<int>(i), g);
                }
                off += chans[i];
            }
        });
    }

    Id slice_channels(Id a, int c0, int c1) {
        const Tensor& x = val(a);
        require(x.rank() == 4, "slice_channels: input must be rank 4");
        require(0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_channels: bad channel range");
        const int B = x.dim(0), H = x.dim(2), W = x.dim(3), C = c1 - c0;
        Tensor y({B, C, H, W});
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) y.at(n, c, h, w) = x.at(n, c0 + c, h, w);
        auto xshape = x.shape;
        return record(std::move(y), {a}, [xshape, c0, C](Ctx c) {
            Tensor g(xshape);
            const int B = xshape[0], H = xshape[2], W = xshape[3];
            for (int n = 0; n < B; ++n)
                for (int ch = 0; ch < C; ++ch)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            g.at(n, c0 + ch, h, w) = c.gout.at(n, ch, h, w);
            c.accumulate(0, g);
        });
    }

    Id concat_flat(const std::vector<Id>& parts) {
        int total = 0;
        for (Id p : parts) {
            require(val(p).rank() == 2 && val(p).dim(0) == 1,
                    "concat_flat: inputs must be [1,N]");
            total += val(p).dim(1);
        }
        Tensor y({1, total});
        int off = 0;
        for (Id p : parts) {
            const Tensor& t = val(p);
            std::copy(t.data.begin(), t.data.end(), y.data.begin() + off);
            off += t.dim(1);
        }
        std::vector<int> sizes;
        for (Id p : parts) sizes.push_back(val(p).dim(1));
        return record(std::move(y), parts, [sizes](Ctx c) {
            int off = 0;
            for (size_t i = 0; i < sizes.size(); ++i) {
                if (c.needs(static_cast<int>(i))) {
                    Tensor g({1, sizes[i]});
                    std::copy(c.gout.data.begin() + off, c.gout.data.begin() + off + sizes[i],
                              g.data.begin());
                    c.accumulate(static_cast<int>(i), g);
                }
                off += sizes[i];
            }
        });
    }

    // ---- structured kernels --------------------------------------------------

    Id conv2d(Id x, Id k, Id bias, int stride, int padding) {
        Tensor y = ops::conv2d(val(x), val(k), val(bias), stride, padding);
        return record(std::move(y), {x, k, bias}, [this, x, k, stride, padding](Ctx c) {
            Tensor gx(val(x).shape), gk(val(k).shape);
            Tensor gb({val(k).dim(0)});
            ops::conv2d_backward(val(x), val(k), c.gout, stride, padding,
                                 c.needs(0) ? &gx : nullptr, c.needs(1) ? &gk : nullptr,
                                 c.needs(2) ? &gb : nullptr);
            if (c.needs(0)) c.accumulate(0, gx);
            if (c.needs(1)) c.accumulate(1, gk);
            if (c.needs(2)) c.accumulate(2, gb);
        });
    }

    Id linear(Id x, Id w, Id bias) {
        Tensor y = ops::linear(val(x), val(w), val(bias));
        return record(std::move(y), {x, w, bias}, [this, x, w](Ctx c) {
            Tensor gx(val(x).shape), gw(val(w).shape), gb({val(w).dim(0)});
            ops::linear_backward(val(x), val(w), c.gout, c.needs(0) ? &gx : nullptr,
                                 c.needs(1) ? &gw : nullptr, c.needs(2) ? &gb : nullptr);
            if (c.needs(0)) c.accumulate(0, gx);
            if (c.needs(1)) c.accumulate(1, gw);
            if (c.needs(2)) c.accumulate(2, gb);
        });
    }

    // Gradient w.r.t. the grid is optional and off by default; candidate flows
    // are constants within a step. Enable it for end-to-end motion training.
    Id grid_sample(Id img, Id grid, bool grad_grid = false) {
        Tensor y = ops::grid_sample(val(img), val(grid));
        return record(std::move(y), {img, grid}, [this, img, grid, grad_grid](Ctx c) {
            Tensor gi(val(img).shape), gg(val(grid).shape);
            const bool want_grid = grad_grid && c.needs(1);
            ops::grid_sample_backward(val(img), val(grid), c.gout,
                                      c.needs(0) ? &gi : nullptr, want_grid ? &gg : nullptr);
            if (c.needs(0)) c.accumulate(0, gi);
            if (want_grid) c.accumulate(1, gg);
        });
    }

    Id resize(Id x, int out_h, int out_w, ResizeMode mode) {
        Tensor y = ops::resize(val(x), out_h, out_w, mode);
        return record(std::move(y), {x}, [this, x, mode](Ctx c) {
            Tensor gx(val(x).shape);
            ops::resize_backward(val(x), c.gout, mode, &gx);
            c.accumulate(0, gx);
        });
    }

    Id softmax_channels(Id x) {
        Tensor y = ops::softmax_channels(val(x));
        Id out = record(std::move(y), {x}, nullptr);
        node(out).backprop = [this, out](Ctx c) {
            Tensor gx(c.gout.shape);
            ops::softmax_channels_backward(val(out), c.gout, &gx);
            c.accumulate(0, gx);
        };
        return out;
    }

    // Per-channel spatial softmax followed by expectation of the normalized
    // coordinate grid: [B,K,h,w] -> [B,K,2] keypoints in [-1,1].
    Id soft_argmax(Id logits) {
        const Tensor& x = val(logits);
        require(x.rank() == 4, "soft_argmax: input must be rank 4");
        const int B = x.dim(0), K = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor probs(x.shape);
        Tensor y({B, K, 2});
        for (int n = 0; n < B; ++n)
            for (int k = 0; k < K; ++k) {
                float m = x.at(n, k, 0, 0);
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) m = std::max(m, x.at(n, k, h, w));
                float s = 0.f;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const float e = std::exp(x.at(n, k, h, w) - m);
                        probs.at(n, k, h, w) = e;
                        s += e;
                    }
                float ex = 0.f, ey = 0.f;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const float p = probs.at(n, k, h, w) / s;
                        probs.at(n, k, h, w) = p;
                        const float cx = W > 1 ? -1.f + 2.f * w / (W - 1) : 0.f;
                        const float cy = H > 1 ? -1.f + 2.f * h / (H - 1) : 0.f;
                        ex += p * cx;
                        ey += p * cy;
                    }
                y.data[static_cast<size_t>((n * K + k) * 2)] = ex;
                y.data[static_cast<size_t>((n * K + k) * 2 + 1)] = ey;
            }
        auto probs_ptr = std::make_shared<Tensor>(std::move(probs));
        Id out = record(std::move(y), {logits}, nullptr);
        node(out).backprop = [this, out, probs_ptr, B, K, H, W](Ctx c) {
            const Tensor& kp = val(out);
            Tensor g({B, K, H, W});
            for (int n = 0; n < B; ++n)
                for (int k = 0; k < K; ++k) {
                    const float gx = c.gout.data[static_cast<size_t>((n * K + k) * 2)];
                    const float gy = c.gout.data[static_cast<size_t>((n * K + k) * 2 + 1)];
                    const float ex = kp.data[static_cast<size_t>((n * K + k) * 2)];
                    const float ey = kp.data[static_cast<size_t>((n * K + k) * 2 + 1)];
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const float cx = W > 1 ? -1.f + 2.f * w / (W - 1) : 0.f;
                            const float cy = H > 1 ? -1.f + 2.f * h / (H - 1) : 0.f;
                            g.at(n, k, h, w) = probs_ptr->at(n, k, h, w) *
                                               (gx * (cx - ex) + gy * (cy - ey));
                        }
                }
            c.accumulate(0, g);
        };
        return out;
    }

    // Gaussian bumps exp(-||g - p||^2 / (2 sigma^2)) on the normalized grid,
    // differentiable w.r.t. the keypoint coordinates: [1,K,2] -> [1,K,h,w].
    Id gaussian_heatmaps(Id kps, int h, int w, float sigma) {
        const Tensor& p = val(kps);
        require(p.rank() == 3 && p.dim(0) == 1 && p.dim(2) == 2,
                "gaussian_heatmaps: keypoints must be [1,K,2]");
        require(sigma > 0.f, "gaussian_heatmaps: sigma must be > 0");
        const int K = p.dim(1);
        const float inv2s2 = 1.f / (2.f * sigma * sigma);
        Tensor y({1, K, h, w});
        for (int k = 0; k < K; ++k) {
            const float px = p.data[static_cast<size_t>(k * 2)];
            const float py = p.data[static_cast<size_t>(k * 2 + 1)];
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix) {
                    const float gx = w > 1 ? -1.f + 2.f * ix / (w - 1) : 0.f;
                    const float gy = h > 1 ? -1.f + 2.f * iy / (h - 1) : 0.f;
                    const float dx = gx - px, dy = gy - py;
                    y.at(0, k, iy, ix) = std::exp(-(dx * dx + dy * dy) * inv2s2);
                }
        }
        Id out = record(std::move(y), {kps}, nullptr);
        node(out).backprop = [this, out, kps, K, h, w, inv2s2](Ctx c) {
            const Tensor& p = val(kps);
            const Tensor& y = val(out);
            Tensor g({1, K, 2});
            for (int k = 0; k < K; ++k) {
                const float px = p.data[static_cast<size_t>(k * 2)];
                const float py = p.data[static_cast<size_t>(k * 2 + 1)];
                float ax = 0.f, ay = 0.f;
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        const float gx = w > 1 ? -1.f + 2.f * ix / (w - 1) : 0.f;
                        const float gy = h > 1 ? -1.f + 2.f * iy / (h - 1) : 0.f;
                        const float v = y.at(0, k, iy, ix) * c.gout.at(0, k, iy, ix);
                        ax += v * 2.f * (gx - px) * inv2s2;
                        ay += v * 2.f * (gy - py) * inv2s2;
                    }
                g.data[static_cast<size_t>(k * 2)] = ax;
                g.data[static_cast<size_t>(k * 2 + 1)] = ay;
            }
            c.accumulate(0, g);
        };
        return out;
    }

    // [1,2,h,w] flow -> [1,h,w,2] sampling grid (pure index shuffle)
    Id flow_to_grid(Id flow) {
        const Tensor& f = val(flow);
        require(f.rank() == 4 && f.dim(0) == 1 && f.dim(1) == 2,
                "flow_to_grid: input must be [1,2,h,w]");
        const int h = f.dim(2), w = f.dim(3);
        Tensor g({1, h, w, 2});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                g.data[static_cast<size_t>((y * w + x) * 2)] = f.at(0, 0, y, x);
                g.data[static_cast<size_t>((y * w + x) * 2 + 1)] = f.at(0, 1, y, x);
            }
        return record(std::move(g), {flow}, [h, w](Ctx c) {
            Tensor gf({1, 2, h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    gf.at(0, 0, y, x) = c.gout.data[static_cast<size_t>((y * w + x) * 2)];
                    gf.at(0, 1, y, x) = c.gout.data[static_cast<size_t>((y * w + x) * 2 + 1)];
                }
            c.accumulate(0, gf);
        });
    }

    // Applies a fixed TPS warp to tracked points [1,K,2]; gradient flows
    // through the warp Jacobian.
    Id tps_points(Id pts, const TpsTransform& t) {
        const Tensor& p = val(pts);
        require(p.rank() == 3 && p.dim(0) == 1 && p.dim(2) == 2,
                "tps_points: points must be [1,K,2]");
        const int K = p.dim(1);
        Tensor y(p.shape);
        for (int k = 0; k < K; ++k) {
            const Point q = tps_apply_point(
                t, {p.data[static_cast<size_t>(k * 2)], p.data[static_cast<size_t>(k * 2 + 1)]});
            y.data[static_cast<size_t>(k * 2)] = q[0];
            y.data[static_cast<size_t>(k * 2 + 1)] = q[1];
        }
        return record(std::move(y), {pts}, [this, pts, t, K](Ctx c) {
            const Tensor& p = val(pts);
            Tensor g(p.shape);
            for (int k = 0; k < K; ++k) {
                const Point pt{p.data[static_cast<size_t>(k * 2)],
                               p.data[static_cast<size_t>(k * 2 + 1)]};
                const auto j = tps_jacobian(t, pt);
                const float gx = c.gout.data[static_cast<size_t>(k * 2)];
                const float gy = c.gout.data[static_cast<size_t>(k * 2 + 1)];
                g.data[static_cast<size_t>(k * 2)] = gx * j[0] + gy * j[2];
                g.data[static_cast<size_t>(k * 2 + 1)] = gx * j[1] + gy * j[3];
            }
            c.accumulate(0, g);
        });
    }

    // ---- backward ------------------------------------------------------------

    std::unordered_map<Id, Tensor> backward(Id loss) {
        if (loss < 0 || loss >= num_nodes())
            throw ContractError("backward: tensor id " + std::to_string(loss) +
                                " was never recorded on this tape");
        if (val(loss).size() != 1)
            throw ContractError("backward: loss must be scalar, got shape " +
                                val(loss).shape_str());
        grads_.assign(nodes_.size(), Tensor());
        has_grad_.assign(nodes_.size(), false);
        grads_[static_cast<size_t>(loss)] = Tensor({1}, {1.f});
        has_grad_[static_cast<size_t>(loss)] = true;
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!has_grad_[static_cast<size_t>(id)] || !n.backprop) continue;
            Ctx ctx{*this, n, grads_[static_cast<size_t>(id)]};
            n.backprop(ctx);
        }
        std::unordered_map<Id, Tensor> out;
        for (Id id = 0; id < num_nodes(); ++id) {
            const Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.requires_grad || n.backprop) continue;  // leaves only
            if (has_grad_[static_cast<size_t>(id)])
                out.emplace(id, grads_[static_cast<size_t>(id)]);
            else
                out.emplace(id, Tensor(n.value.shape));  // disconnected -> zero
        }
        return out;
    }

  private:
    struct Node;

  public:
    // Passed to backprop lambdas: output gradient plus accumulation helpers.
    struct Ctx {
        Tape& tape;
        Node& node;
        const Tensor& gout;
        bool needs(int parent_idx) const {
            return tape.nodes_[static_cast<size_t>(node.parents[static_cast<size_t>(parent_idx)])]
                .requires_grad;
        }
        void accumulate(int parent_idx, const Tensor& g) const {
            const Id pid = node.parents[static_cast<size_t>(parent_idx)];
            if (!tape.nodes_[static_cast<size_t>(pid)].requires_grad) return;
            if (!tape.has_grad_[static_cast<size_t>(pid)]) {
                tape.grads_[static_cast<size_t>(pid)] = g;
                tape.has_grad_[static_cast<size_t>(pid)] = true;
            } else {
                Tensor& acc = tape.grads_[static_cast<size_t>(pid)];
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
            }
        }
    };

  private:
    struct Node {
        Tensor value;
        bool requires_grad;
        std::vector<Id> parents;
        std::function<void(Ctx)> backprop;
    };

    Node& node(Id id) {
        if (id < 0 || id >= num_nodes())
            throw ContractError("tape: tensor id " + std::to_string(id) + " not recorded");
        return nodes_[static_cast<size_t>(id)];
    }
    const Node& node(Id id) const {
        if (id < 0 || id >= num_nodes())
            throw ContractError("tape: tensor id " + std::to_string(id) + " not recorded");
        return nodes_[static_cast<size_t>(id)];
    }

    Id record(Tensor value, std::vector<Id> parents, std::function<void(Ctx)> backprop) {
        bool rg = false;
        for (Id p : parents) rg = rg || node(p).requires_grad;
        value.requires_grad = rg;
        nodes_.push_back(Node{std::move(value), rg, std::move(parents), std::move(backprop)});
        return static_cast<Id>(nodes_.size() - 1);
    }

    // a is [B,1,H,W], b is [B,C,H,W]
    Id mul_bcast(Id a, Id b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        const int B = tb.dim(0), C = tb.dim(1), H = tb.dim(2), W = tb.dim(3);
        Tensor y(tb.shape);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        y.at(n, c, h, w) = ta.at(n, 0, h, w) * tb.at(n, c, h, w);
        return record(std::move(y), {a, b}, [this, a, b, B, C, H, W](Ctx c) {
            if (c.needs(0)) {
                Tensor g(val(a).shape);
                for (int n = 0; n < B; ++n)
                    for (int ch = 0; ch < C; ++ch)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                g.at(n, 0, h, w) += c.gout.at(n, ch, h, w) * val(b).at(n, ch, h, w);
                c.accumulate(0, g);
            }
            if (c.needs(1)) {
                Tensor g(val(b).shape);
                for (int n = 0; n < B; ++n)
                    for (int ch = 0; ch < C; ++ch)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                g.at(n, ch, h, w) = c.gout.at(n, ch, h, w) * val(a).at(n, 0, h, w);
                c.accumulate(1, g);
            }
        });
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<bool> has_grad_;
};

}  // namespace mp
