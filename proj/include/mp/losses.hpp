#pragma once

#include "mp/nets.hpp"
#include "mp/presets.hpp"

namespace mp {

constexpr float kEqWarpControlSigma = 0.1f;
constexpr int kPerceptualScales = 3;
constexpr int kPerceptualChannels = 8;

// Training-only weights: DMN mask predictors, the keypoint-distance head and
// the fixed perceptual pyramid (never updated, recorded seed).
inline void init_training_weights(ModelWeights& w, const PresetConfig& preset, uint64_t seed) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    nets::init_conv(w, "dmn.aux_fg", 1, preset.dmn.enc[0], 3, rng);
    nets::init_conv(w, "dmn.aux_lm", 1, preset.dmn.enc[0], 3, rng);
    nets::init_linear(w, "kp_head", 2 * kNumFacialKeypoints, 2 * kNumMixedKeypoints, rng);
    nets::init_conv(w, "percep.c0", kPerceptualChannels, 3, 3, rng);
    nets::init_conv(w, "percep.c1", kPerceptualChannels, kPerceptualChannels, 3, rng);
}

// Mean absolute feature distance under a fixed random conv stack at 3 scales.
// The pyramid weights must be bound non-trainable.
inline Tape::Id perceptual_loss_forward(ParamBinder& P, Tape::Id pred, Tape::Id target) {
    Tape& t = P.tape();
    check_same_shape(t.val(pred), t.val(target), "perceptual_loss");
    const int H = t.val(pred).dim(2), W = t.val(pred).dim(3);
    auto features = [&](Tape::Id img, int h, int w) {
        Tape::Id x = t.resize(img, h, w, ResizeMode::bilinear);
        x = t.relu(t.conv2d(x, P("percep.c0.w"), P("percep.c0.b"), 1, 1));
        return t.conv2d(x, P("percep.c1.w"), P("percep.c1.b"), 1, 1);
    };
    Tape::Id loss = t.put(Tensor({1}));
    for (int s = 0; s < kPerceptualScales; ++s) {
        const int h = std::max(1, H >> s), w = std::max(1, W >> s);
        loss = t.add(loss, t.mean(t.abs(t.sub(features(pred, h, w), features(target, h, w)))));
    }
    return loss;
}

inline float perceptual_loss(const Tensor& pred, const Tensor& target,
                             const ModelWeights& pyramid) {
    Tape t;
    ParamBinder P(t, pyramid, false);
    return t.val(perceptual_loss_forward(P, t.put(pred), t.put(target))).data[0];
}

// Random non-degenerate TPS warp for the equivariance constraint: a fixed
// 5-point frame with gaussian-perturbed destinations.
inline TpsTransform draw_equivariance_warp(Rng& rng) {
    const std::array<Point, 5> base{{{-0.8f, -0.8f},
                                     {0.8f, -0.8f},
                                     {-0.8f, 0.8f},
                                     {0.8f, 0.8f},
                                     {0.f, 0.f}}};
    for (int attempt = 0; attempt < 16; ++attempt) {
        std::array<Point, 5> dst = base;
        for (auto& p : dst) {
            p[0] += rng.gaussian(0.f, kEqWarpControlSigma);
            p[1] += rng.gaussian(0.f, kEqWarpControlSigma);
        }
        try {
            return fit_tps(base, dst);
        } catch (const TpsDegenerateError&) {
            continue;
        }
    }
    throw NumericError("equivariance warp: could not draw a non-degenerate TPS in 16 tries");
}

// mean_i || nk(W(image))_i - W(nk(image))_i ||_1 for a known warp W
inline Tape::Id equivariance_loss_forward(ParamBinder& P, const NkDetectorSpec& nk_spec,
                                          Tape::Id image, const TpsTransform& warp) {
    Tape& t = P.tape();
    const int H = t.val(image).dim(2), W = t.val(image).dim(3);
    const Tensor warp_grid = tps_apply(warp, ops::identity_grid(H, W));
    const Tape::Id warped = t.grid_sample(image, t.put(warp_grid));
    const Tape::Id kp_of_warped = nets::nk_detect_forward(P, nk_spec, warped);
    const Tape::Id warped_kp = t.tps_points(nets::nk_detect_forward(P, nk_spec, image), warp);
    const Tape::Id d = t.abs(t.sub(kp_of_warped, warped_kp));
    return t.mean(t.row_sum(t.reshape(d, {kNumNeuralKeypoints, 2})));
}

inline float equivariance_loss(const Tensor& image, const ModelWeights& detector_weights,
                               const NkDetectorSpec& nk_spec, int rng_seed) {
    Rng rng(static_cast<uint64_t>(rng_seed));
    const TpsTransform warp = draw_equivariance_warp(rng);
    Tape t;
    ParamBinder P(t, detector_weights, false);
    return t.val(equivariance_loss_forward(P, nk_spec, t.put(image), warp)).data[0];
}

// L1 penalties on the DMN mask predictors against the driving frame's masks.
inline std::pair<Tape::Id, Tape::Id> facial_knowledge_losses_forward(
    Tape& t, Tape::Id aux_fg, Tape::Id aux_lm, Tape::Id target_fg, Tape::Id target_lm) {
    check_same_shape(t.val(aux_fg), t.val(target_fg), "facial_knowledge fg");
    check_same_shape(t.val(aux_lm), t.val(target_lm), "facial_knowledge lm");
    return {t.mean(t.abs(t.sub(aux_fg, target_fg))), t.mean(t.abs(t.sub(aux_lm, target_lm)))};
}

inline std::pair<float, float> facial_knowledge_losses(const Tensor& aux_fg, const Tensor& aux_lm,
                                                       const Tensor& target_fg,
                                                       const Tensor& target_lm) {
    Tape t;
    const auto [a, b] = facial_knowledge_losses_forward(t, t.put(aux_fg), t.put(aux_lm),
                                                        t.put(target_fg), t.put(target_lm));
    return {t.val(a).data[0], t.val(b).data[0]};
}

// Training-only linear head from mixed keypoints to predicted facial points;
// loss is the mean euclidean distance to the reference landmarks.
inline Tape::Id kp_loss_forward(ParamBinder& P, Tape::Id mixed, Tape::Id fk) {
    Tape& t = P.tape();
    require(t.val(mixed).dim(1) == kNumMixedKeypoints, "kp_loss: mixed must hold 50 points");
    require(t.val(fk).dim(1) == kNumFacialKeypoints, "kp_loss: fk must hold 106 points");
    const Tape::Id flat = t.reshape(mixed, {1, 2 * kNumMixedKeypoints});
    const Tape::Id pred =
        t.reshape(t.linear(flat, P("kp_head.w"), P("kp_head.b")), {1, kNumFacialKeypoints, 2});
    const Tape::Id d = t.sub(pred, fk);
    const Tape::Id sq = t.mul(d, d);
    return t.mean(t.sqrt_op(t.row_sum(t.reshape(sq, {kNumFacialKeypoints, 2}))));
}

inline float kp_loss(const KeypointSet& mixed, const KeypointSet& fk,
                     const ModelWeights& head_weights) {
    Tape t;
    ParamBinder P(t, head_weights, false);
    return t
        .val(kp_loss_forward(P, t.put(mixed.to_tensor()), t.put(fk.to_tensor())))
        .data[0];
}

}  // namespace mp
