#pragma once

#include <vector>

#include "mp/nets.hpp"
#include "mp/tps.hpp"

namespace mp {

constexpr int kTpsGroupSize = 5;
constexpr int kNumTpsTransforms = kNumMixedKeypoints / kTpsGroupSize;  // 10
constexpr int kNumCandidates = kNumTpsTransforms + 1;                  // + identity background

// Backward flow in normalized coordinates plus occlusion gate.
struct MotionField {
    Tensor flow;       // [1,2,H,W], absolute sampling coordinates
    Tensor occlusion;  // [1,1,H,W] in [0,1]

    void validate() const {
        require(flow.rank() == 4 && flow.dim(1) == 2, "motion field: flow must be [1,2,H,W]");
        require(occlusion.rank() == 4 && occlusion.dim(1) == 1 &&
                    occlusion.dim(2) == flow.dim(2) && occlusion.dim(3) == flow.dim(3),
                "motion field: occlusion must be [1,1,H,W] matching flow");
        if (!flow.all_finite()) throw NumericError("motion field: non-finite flow");
        for (float v : occlusion.data)
            if (!(v >= 0.f && v <= 1.f))
                throw ContractError("motion field: occlusion outside [0,1]");
    }
};

struct DenseMotionOutput {
    MotionField motion;
    Tensor contributions;  // [1,11,h,w], softmax-normalized
    Tensor residual_flow;  // [1,2,h,w]
    Tensor aux_fg_mask;    // [1,1,h,w], training only
    Tensor aux_lm_mask;    // [1,1,h,w], training only
    int degenerate_groups = 0;
};

namespace motion_detail {

// [1,2,H,W] identity flow (channel 0 = x, channel 1 = y)
inline Tensor identity_flow(int h, int w) {
    Tensor f({1, 2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.at(0, 0, y, x) = w > 1 ? -1.f + 2.f * x / (w - 1) : 0.f;
            f.at(0, 1, y, x) = h > 1 ? -1.f + 2.f * y / (h - 1) : 0.f;
        }
    return f;
}

inline Tensor grid_to_flow(const Tensor& grid) {  // [1,h,w,2] -> [1,2,h,w]
    const int h = grid.dim(1), w = grid.dim(2);
    Tensor f({1, 2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.at(0, 0, y, x) = grid.data[static_cast<size_t>((y * w + x) * 2)];
            f.at(0, 1, y, x) = grid.data[static_cast<size_t>((y * w + x) * 2 + 1)];
        }
    return f;
}

inline Tensor flow_to_grid(const Tensor& flow) {  // [1,2,h,w] -> [1,h,w,2]
    const int h = flow.dim(2), w = flow.dim(3);
    Tensor g({1, h, w, 2});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            g.data[static_cast<size_t>((y * w + x) * 2)] = flow.at(0, 0, y, x);
            g.data[static_cast<size_t>((y * w + x) * 2 + 1)] = flow.at(0, 1, y, x);
        }
    return g;
}

inline std::array<Point, 5> group_points(const Tensor& kps, int group) {
    std::array<Point, 5> pts;
    for (int i = 0; i < kTpsGroupSize; ++i) {
        const int idx = group * kTpsGroupSize + i;
        pts[static_cast<size_t>(i)] = {kps.data[static_cast<size_t>(idx * 2)],
                                       kps.data[static_cast<size_t>(idx * 2 + 1)]};
    }
    return pts;
}

}  // namespace motion_detail

// K+1 candidate backward flows as [1,h,w,2] sampling grids. Candidate 0 is
// the identity (background); candidates 1..10 come from TPS transforms fitted
// driving -> source over contiguous groups of 5 mixed keypoints. Degenerate
// groups fall back to the identity and are counted, not fatal.
inline std::vector<Tensor> build_candidates(const Tensor& s_kps, const Tensor& d_kps, int h,
                                            int w, int* degenerate_count = nullptr) {
    require(s_kps.rank() == 3 && s_kps.dim(1) == kNumMixedKeypoints,
            "build_candidates: source keypoints must be [1,50,2]");
    require(d_kps.rank() == 3 && d_kps.dim(1) == kNumMixedKeypoints,
            "build_candidates: driving keypoints must be [1,50,2]");
    const Tensor id = ops::identity_grid(h, w);
    std::vector<Tensor> cands;
    cands.reserve(kNumCandidates);
    cands.push_back(id);
    int degenerate = 0;
    for (int g = 0; g < kNumTpsTransforms; ++g) {
        const auto src = motion_detail::group_points(d_kps, g);
        const auto dst = motion_detail::group_points(s_kps, g);
        try {
            cands.push_back(tps_apply(fit_tps(src, dst), id));
        } catch (const TpsDegenerateError&) {
            ++degenerate;
            cands.push_back(id);
        }
    }
    if (degenerate_count) *degenerate_count = degenerate;
    return cands;
}

inline std::vector<Tensor> build_candidates(const KeypointSet& s_kps, const KeypointSet& d_kps,
                                            int h, int w, int* degenerate_count = nullptr) {
    require(s_kps.kind == KeypointKind::mixed && d_kps.kind == KeypointKind::mixed,
            "build_candidates: expects mixed keypoint sets");
    return build_candidates(s_kps.to_tensor(), d_kps.to_tensor(), h, w, degenerate_count);
}

constexpr float kHeatmapSigma = 0.1f;  // in normalized coordinates

struct DenseMotionIds {
    Tape::Id flow;           // [1,2,H,W]
    Tape::Id occlusion;      // [1,1,H,W]
    Tape::Id contributions;  // [1,11,h,w]
    Tape::Id residual;       // [1,2,h,w]
    Tape::Id aux_fg = -1;    // [1,1,h,w] when training
    Tape::Id aux_lm = -1;
    int degenerate_groups = 0;
};

// Dense motion network on the tape. Runs at quarter resolution: input is the
// 50-channel heatmap difference, 11 candidate-warped copies of the source,
// and the two source masks (85 channels total). Flow is composed in
// displacement form so identical candidates yield the identity grid exactly.
inline DenseMotionIds dense_motion_forward(ParamBinder& P, const UNetSpec& dmn,
                                           Tape::Id source, Tape::Id s_kps, Tape::Id d_kps,
                                           Tape::Id fg_mask, Tape::Id lm_mask, bool training) {
    Tape& t = P.tape();
    const Tensor& src = t.val(source);
    require(src.rank() == 4 && src.dim(1) == 3, "dense_motion: source must be [1,3,H,W]");
    const int H = src.dim(2), W = src.dim(3);
    require(H % 4 == 0 && W % 4 == 0, "dense_motion: spatial extents must be multiples of 4");
    const int h = H / 4, w = W / 4;
    check_same_shape(t.val(fg_mask), Tensor({1, 1, H, W}), "dense_motion fg_mask");
    check_same_shape(t.val(lm_mask), Tensor({1, 1, H, W}), "dense_motion lm_mask");

    const Tape::Id heat_s = t.gaussian_heatmaps(s_kps, h, w, kHeatmapSigma);
    const Tape::Id heat_d = t.gaussian_heatmaps(d_kps, h, w, kHeatmapSigma);
    const Tape::Id heat_diff = t.sub(heat_d, heat_s);

    DenseMotionIds out;
    const auto cands =
        build_candidates(t.val(s_kps), t.val(d_kps), h, w, &out.degenerate_groups);

    const Tape::Id source_small = t.resize(source, h, w, ResizeMode::bilinear);
    std::vector<Tape::Id> net_in{heat_diff};
    std::vector<Tensor> disp;  // candidate displacement from identity, [1,2,h,w]
    const Tensor id_q = motion_detail::identity_flow(h, w);
    for (const Tensor& cand : cands) {
        net_in.push_back(t.grid_sample(source_small, t.put(cand)));
        Tensor d = motion_detail::grid_to_flow(cand);
        for (size_t i = 0; i < d.data.size(); ++i) d.data[i] -= id_q.data[i];
        disp.push_back(std::move(d));
    }
    net_in.push_back(t.resize(fg_mask, h, w, ResizeMode::bilinear));
    net_in.push_back(t.resize(lm_mask, h, w, ResizeMode::bilinear));

    const auto net = nets::unet_forward(P, dmn, "dmn", t.concat_channels(net_in));
    out.contributions = t.softmax_channels(t.slice_channels(net.out, 0, kNumCandidates));
    const Tape::Id occ_q = t.sigmoid(t.slice_channels(net.out, kNumCandidates, kNumCandidates + 1));
    out.residual = t.slice_channels(net.out, kNumCandidates + 1, kNumCandidates + 3);

    Tape::Id disp_q = out.residual;
    for (int k = 0; k < kNumCandidates; ++k) {
        bool all_zero = true;
        for (float v : disp[static_cast<size_t>(k)].data)
            if (v != 0.f) { all_zero = false; break; }
        if (all_zero) continue;  // identity candidates contribute nothing
        const Tape::Id ck = t.slice_channels(out.contributions, k, k + 1);
        disp_q = t.add(disp_q, t.mul(ck, t.put(disp[static_cast<size_t>(k)])));
    }
    out.flow = t.add(t.put(motion_detail::identity_flow(H, W)),
                     t.resize(disp_q, H, W, ResizeMode::bilinear));
    out.occlusion = t.resize(occ_q, H, W, ResizeMode::bilinear);

    if (training) {
        out.aux_fg = t.sigmoid(t.conv2d(net.features, P("dmn.aux_fg.w"), P("dmn.aux_fg.b"), 1, 1));
        out.aux_lm = t.sigmoid(t.conv2d(net.features, P("dmn.aux_lm.w"), P("dmn.aux_lm.b"), 1, 1));
    }
    return out;
}

inline DenseMotionOutput dense_motion(const Tensor& source, const KeypointSet& s_kps,
                                      const KeypointSet& d_kps, const Tensor& fg_mask,
                                      const Tensor& lm_mask, const ModelWeights& weights,
                                      const UNetSpec& dmn, bool training) {
    require(s_kps.kind == KeypointKind::mixed && d_kps.kind == KeypointKind::mixed,
            "dense_motion: expects mixed keypoint sets");
    Tape t;
    ParamBinder P(t, weights, false);
    const auto ids = dense_motion_forward(P, dmn, t.put(source), t.put(s_kps.to_tensor()),
                                          t.put(d_kps.to_tensor()), t.put(fg_mask),
                                          t.put(lm_mask), training);
    DenseMotionOutput out;
    out.motion.flow = t.val(ids.flow);
    out.motion.occlusion = t.val(ids.occlusion);
    out.contributions = t.val(ids.contributions);
    out.residual_flow = t.val(ids.residual);
    if (training) {
        out.aux_fg_mask = t.val(ids.aux_fg);
        out.aux_lm_mask = t.val(ids.aux_lm);
    }
    out.degenerate_groups = ids.degenerate_groups;
    out.motion.validate();
    return out;
}

// S_w = occlusion * grid_sample(source, flow)
inline Tensor warp_and_occlude(const Tensor& source, const MotionField& m) {
    m.validate();
    const Tensor warped = ops::grid_sample(source, motion_detail::flow_to_grid(m.flow));
    Tensor out = warped;
    const int C = out.dim(1), H = out.dim(2), W = out.dim(3);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.at(0, c, y, x) *= m.occlusion.at(0, 0, y, x);
    return out;
}

}  // namespace mp
