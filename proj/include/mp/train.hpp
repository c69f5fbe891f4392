#pragma once

#include <map>
#include <ostream>

#include "mp/dataset.hpp"
#include "mp/losses.hpp"
#include "mp/metrics.hpp"
#include "mp/synthesis.hpp"

namespace mp {

enum class KpMode { mixed, nk_only, fk_only };

inline const char* kp_mode_name(KpMode m) {
    switch (m) {
        case KpMode::mixed: return "mixed";
        case KpMode::nk_only: return "nk_only";
        case KpMode::fk_only: return "fk_only";
    }
    return "?";
}

inline KpMode kp_mode_by_name(const std::string& s) {
    if (s == "mixed") return KpMode::mixed;
    if (s == "nk_only") return KpMode::nk_only;
    if (s == "fk_only") return KpMode::fk_only;
    throw FormatError("unknown keypoint mode: " + s + " (expected mixed|nk_only|fk_only)");
}

struct TrainConfig {
    float learning_rate = 0.002f;
    int epochs = 60;
    int batch_size = 1;
    uint64_t seed = 0;
    std::string optimizer = "adam";  // adam | sgd-momentum
    KpMode kp_mode = KpMode::mixed;
    int num_views = 4;       // pseudo multiview bank size during training
    bool grad_grid = false;  // propagate gradients through the sampling grid
};

struct LossReport {
    float percep = 0, l1 = 0, kp = 0, eq = 0, landmark = 0, mask = 0;
    float total = 0;

    float sum() const { return percep + l1 + kp + eq + landmark + mask; }
};

// Names under these prefixes are part of the loss, not the model: they are
// bound to the tape but never updated.
inline bool weight_is_frozen(const std::string& name) {
    return name.rfind("percep.", 0) == 0;
}

// Adam / SGD-momentum over named weights. State is keyed by weight name so a
// run can be reproduced regardless of binding order.
class Optimizer {
  public:
    Optimizer(std::string kind, float lr) : kind_(std::move(kind)), lr_(lr) {
        require(kind_ == "adam" || kind_ == "sgd-momentum",
                "optimizer: expected adam or sgd-momentum, got " + kind_);
    }

    void apply(ModelWeights& w, const std::map<std::string, Tensor>& grads) {
        if (lr_ == 0.f) return;  // weights stay bitwise unchanged
        ++step_;
        for (const auto& [name, g] : grads) {
            if (weight_is_frozen(name)) continue;
            Tensor& p = w.entries.at(name);
            check_same_shape(p, g, ("optimizer gradient for " + name).c_str());
            if (kind_ == "adam") {
                auto& [m, v] = state(name, p.shape);
                const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
                const float c1 = 1.f - std::pow(b1, static_cast<float>(step_));
                const float c2 = 1.f - std::pow(b2, static_cast<float>(step_));
                for (size_t i = 0; i < p.data.size(); ++i) {
                    m.data[i] = b1 * m.data[i] + (1.f - b1) * g.data[i];
                    v.data[i] = b2 * v.data[i] + (1.f - b2) * g.data[i] * g.data[i];
                    p.data[i] -= lr_ * (m.data[i] / c1) /
                                 (std::sqrt(v.data[i] / c2) + eps);
                }
            } else {
                auto& [m, v] = state(name, p.shape);
                (void)v;
                for (size_t i = 0; i < p.data.size(); ++i) {
                    m.data[i] = 0.9f * m.data[i] + g.data[i];
                    p.data[i] -= lr_ * m.data[i];
                }
            }
        }
    }

    int64_t steps_taken() const { return step_; }

  private:
    std::pair<Tensor, Tensor>& state(const std::string& name, const std::vector<int>& shape) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_.emplace(name, std::make_pair(Tensor(shape), Tensor(shape))).first;
        return it->second;
    }

    std::string kind_;
    float lr_;
    int64_t step_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> state_;
};

// One source -> driving supervision pair with its analytic side information.
struct TrainExample {
    const ToySample* source;
    const ToySample* driving;
};

namespace train_detail {

// Fixed 50-of-106 subsampling for the fk_only ablation.
inline KeypointSet subsample_fk(const KeypointSet& fk) {
    std::vector<Point> pts(kNumMixedKeypoints);
    for (int i = 0; i < kNumMixedKeypoints; ++i)
        pts[static_cast<size_t>(i)] =
            fk.points[static_cast<size_t>(i * kNumFacialKeypoints / kNumMixedKeypoints)];
    return KeypointSet(std::move(pts), KeypointKind::mixed);
}

inline void check_finite(float v, const char* term) {
    if (!std::isfinite(v))
        throw NumericError(std::string("train_step: non-finite ") + term + " loss");
}

}  // namespace train_detail

// Motion keypoints for one frame under the chosen ablation mode (inference
// path, outside any tape).
inline KeypointSet motion_keypoints(const Tensor& image, const KeypointSet& fk,
                                    const ModelWeights& w, const PresetConfig& preset,
                                    KpMode mode) {
    if (mode == KpMode::fk_only) return train_detail::subsample_fk(fk);
    const KeypointSet nk = nk_detect(image, w, preset.nk);
    if (mode == KpMode::nk_only) return KeypointSet(nk.points, KeypointKind::mixed);
    return merge_keypoints(nk, fk, w);
}

// One optimization step over a batch of examples: full motion + synthesis
// forward, the six-term unit-weight loss, reverse pass, optimizer update.
// The feature bank is treated as a constant (it is refreshed periodically by
// the caller). `rng` drives the per-step equivariance warp.
inline LossReport train_step(const std::vector<TrainExample>& batch, ModelWeights& w,
                             Optimizer& opt, const TrainConfig& cfg, const PresetConfig& preset,
                             const FeatureBank& bank, Rng& rng) {
    require(!batch.empty(), "train_step: empty batch");
    const TpsTransform eq_warp = draw_equivariance_warp(rng);
    std::map<std::string, Tensor> grad_acc;
    LossReport report;

    for (const TrainExample& ex : batch) {
        Tape t;
        ParamBinder P(t, w, true);
        const ToySample& S = *ex.source;
        const ToySample& D = *ex.driving;
        const int H = S.image.dim(2), W = S.image.dim(3);
        const int h = H / 4, wq = W / 4;

        const Tape::Id src = t.put(S.image);
        const Tape::Id drv = t.put(D.image);
        const Tape::Id s_fg = t.put(S.fg_mask);
        const Tape::Id s_lm = t.put(S.lm_mask);

        // motion keypoints per ablation mode
        Tape::Id s_kps, d_kps;
        if (cfg.kp_mode == KpMode::fk_only) {
            s_kps = t.put(train_detail::subsample_fk(S.fk).to_tensor());
            d_kps = t.put(train_detail::subsample_fk(D.fk).to_tensor());
        } else {
            const Tape::Id s_nk = nets::nk_detect_forward(P, preset.nk, src);
            const Tape::Id d_nk = nets::nk_detect_forward(P, preset.nk, drv);
            if (cfg.kp_mode == KpMode::mixed) {
                s_kps = nets::merger_forward(P, s_nk, t.put(S.fk.to_tensor()));
                d_kps = nets::merger_forward(P, d_nk, t.put(D.fk.to_tensor()));
            } else {
                s_kps = s_nk;
                d_kps = d_nk;
            }
        }

        const auto mo =
            dense_motion_forward(P, preset.dmn, src, s_kps, d_kps, s_fg, s_lm, true);
        const Tape::Id warped =
            t.mul(mo.occlusion, t.grid_sample(src, t.flow_to_grid(mo.flow), cfg.grad_grid));

        const Tensor bank_avg = bank.average(
            {1, preset.synth.bottleneck_ch(), H >> (preset.synth.levels() - 1),
             W >> (preset.synth.levels() - 1)});
        const Tape::Id pred =
            synthesize_forward(P, preset.synth, warped, t.put(S.background), s_fg,
                               t.put(bank_avg));

        // six loss terms, unit weights
        const Tape::Id zero = t.put(Tensor({1}));
        const Tape::Id percep = perceptual_loss_forward(P, pred, drv);
        const Tape::Id l1 = t.mean(t.abs(t.sub(pred, drv)));
        const Tape::Id kp = cfg.kp_mode == KpMode::mixed
                                ? kp_loss_forward(P, d_kps, t.put(D.fk.to_tensor()))
                                : zero;
        const Tape::Id eq =
            cfg.kp_mode == KpMode::fk_only
                ? zero
                : equivariance_loss_forward(P, preset.nk, drv, eq_warp);
        const Tensor fg_target = ops::resize(D.fg_mask, h, wq, ResizeMode::bilinear);
        const Tensor lm_target = ops::resize(D.lm_mask, h, wq, ResizeMode::bilinear);
        const auto [mask, landmark] = facial_knowledge_losses_forward(
            t, mo.aux_fg, mo.aux_lm, t.put(fg_target), t.put(lm_target));

        const Tape::Id total =
            t.add(t.add(t.add(percep, l1), t.add(kp, eq)), t.add(landmark, mask));

        LossReport r;
        r.percep = t.val(percep).data[0];
        r.l1 = t.val(l1).data[0];
        r.kp = t.val(kp).data[0];
        r.eq = t.val(eq).data[0];
        r.landmark = t.val(landmark).data[0];
        r.mask = t.val(mask).data[0];
        r.total = t.val(total).data[0];
        train_detail::check_finite(r.percep, "perceptual");
        train_detail::check_finite(r.l1, "l1");
        train_detail::check_finite(r.kp, "keypoint");
        train_detail::check_finite(r.eq, "equivariance");
        train_detail::check_finite(r.landmark, "landmark");
        train_detail::check_finite(r.mask, "mask");

        auto grads = t.backward(total);
        for (const auto& [name, id] : P.bound()) {
            auto git = grads.find(id);
            if (git == grads.end()) continue;
            auto acc = grad_acc.find(name);
            if (acc == grad_acc.end()) {
                grad_acc.emplace(name, std::move(git->second));
            } else {
                for (size_t i = 0; i < acc->second.data.size(); ++i)
                    acc->second.data[i] += git->second.data[i];
            }
        }
        report.percep += r.percep;
        report.l1 += r.l1;
        report.kp += r.kp;
        report.eq += r.eq;
        report.landmark += r.landmark;
        report.mask += r.mask;
        report.total += r.total;
    }

    const float inv = 1.f / static_cast<float>(batch.size());
    report.percep *= inv;
    report.l1 *= inv;
    report.kp *= inv;
    report.eq *= inv;
    report.landmark *= inv;
    report.mask *= inv;
    report.total *= inv;
    for (auto& [name, g] : grad_acc)
        for (auto& v : g.data) v *= inv;
    opt.apply(w, grad_acc);
    return report;
}

// ---------- toy training driver ----------

struct ToyTrainOptions {
    TrainConfig train;
    int resolution = 64;
    int steps = 2000;
    int num_frames = 8;     // frame 0 is the source, the rest drive
    int bank_refresh = 50;  // steps between feature-bank recomputes
};

struct ToyTrainResult {
    ModelWeights weights;
    std::vector<LossReport> history;
    float initial_loss = 0;   // mean total over the first window
    float final_loss = 0;     // mean total over the last window
    float final_psnr = 0;     // mean reconstruction PSNR over driving frames
    float baseline_psnr = 0;  // mean PSNR of the unmoved source (identity warp)
    float final_recon = 0;    // mean perceptual+L1 reconstruction loss, inference path
};

// Inference-path reconstruction of every driving frame from frame 0.
inline float evaluate_toy(const std::vector<ToySample>& frames, const ModelWeights& w,
                          const PresetConfig& preset, const TrainConfig& cfg) {
    const ToySample& S = frames[0];
    const KeypointSet s_kps = motion_keypoints(S.image, S.fk, w, preset, cfg.kp_mode);

    FeatureBank bank;
    if (cfg.num_views > 0) {
        std::vector<KeypointSet> samples;
        for (int i = 1; i < static_cast<int>(frames.size()) && i <= cfg.num_views; ++i)
            samples.push_back(
                motion_keypoints(frames[static_cast<size_t>(i)].image,
                                 frames[static_cast<size_t>(i)].fk, w, preset, cfg.kp_mode));
        bank = precompute_bank(S.image, s_kps, samples, S.background, S.fg_mask, S.lm_mask, w,
                               preset.dmn, preset.synth);
    }
    AppearanceKnowledge knowledge{S.background, S.fg_mask, bank};

    double acc = 0.0;
    int n = 0;
    for (size_t i = 1; i < frames.size(); ++i) {
        const ToySample& D = frames[i];
        const KeypointSet d_kps = motion_keypoints(D.image, D.fk, w, preset, cfg.kp_mode);
        const auto mo =
            dense_motion(S.image, s_kps, d_kps, S.fg_mask, S.lm_mask, w, preset.dmn, false);
        const Tensor warped = warp_and_occlude(S.image, mo.motion);
        const Tensor pred = synthesize(warped, knowledge, w, preset.synth);
        acc += psnr(pred, D.image);
        ++n;
    }
    return n > 0 ? static_cast<float>(acc / n) : 0.f;
}

// Deterministic reconstruction loss (perceptual + L1) of every driving frame
// on the inference path; the ablation comparisons use this rather than the
// noisy per-step training losses.
inline float evaluate_toy_loss(const std::vector<ToySample>& frames, const ModelWeights& w,
                               const PresetConfig& preset, const TrainConfig& cfg) {
    const ToySample& S = frames[0];
    const KeypointSet s_kps = motion_keypoints(S.image, S.fk, w, preset, cfg.kp_mode);
    FeatureBank bank;
    if (cfg.num_views > 0) {
        std::vector<KeypointSet> samples;
        for (int i = 1; i < static_cast<int>(frames.size()) && i <= cfg.num_views; ++i)
            samples.push_back(
                motion_keypoints(frames[static_cast<size_t>(i)].image,
                                 frames[static_cast<size_t>(i)].fk, w, preset, cfg.kp_mode));
        bank = precompute_bank(S.image, s_kps, samples, S.background, S.fg_mask, S.lm_mask, w,
                               preset.dmn, preset.synth);
    }
    const AppearanceKnowledge knowledge{S.background, S.fg_mask, bank};
    double acc = 0.0;
    int n = 0;
    for (size_t i = 1; i < frames.size(); ++i) {
        const ToySample& D = frames[i];
        const KeypointSet d_kps = motion_keypoints(D.image, D.fk, w, preset, cfg.kp_mode);
        const auto mo =
            dense_motion(S.image, s_kps, d_kps, S.fg_mask, S.lm_mask, w, preset.dmn, false);
        const Tensor warped = warp_and_occlude(S.image, mo.motion);
        const Tensor pred = synthesize(warped, knowledge, w, preset.synth);
        double l1 = 0.0;
        for (size_t j = 0; j < pred.data.size(); ++j)
            l1 += std::fabs(pred.data[j] - D.image.data[j]);
        acc += perceptual_loss(pred, D.image, w) + l1 / static_cast<double>(pred.data.size());
        ++n;
    }
    return n > 0 ? static_cast<float>(acc / n) : 0.f;
}

inline FeatureBank training_bank(const std::vector<ToySample>& frames, const ModelWeights& w,
                                 const PresetConfig& preset, const TrainConfig& cfg) {
    if (cfg.num_views == 0) return {};
    const ToySample& S = frames[0];
    const KeypointSet s_kps = motion_keypoints(S.image, S.fk, w, preset, cfg.kp_mode);
    std::vector<KeypointSet> samples;
    for (int i = 1; i < static_cast<int>(frames.size()) && i <= cfg.num_views; ++i)
        samples.push_back(motion_keypoints(frames[static_cast<size_t>(i)].image,
                                           frames[static_cast<size_t>(i)].fk, w, preset,
                                           cfg.kp_mode));
    return precompute_bank(S.image, s_kps, samples, S.background, S.fg_mask, S.lm_mask, w,
                           preset.dmn, preset.synth);
}

// Self-contained training run on the procedural dataset. Writes one JSONL
// record per step to `log` when provided.
inline ToyTrainResult train_toy(const ToyTrainOptions& opt, std::ostream* log = nullptr) {
    require(opt.num_frames >= 2, "train_toy: need at least one driving frame");
    const PresetConfig preset = preset_by_name("toy");
    require(opt.resolution % 4 == 0 && opt.resolution >= 16,
            "train_toy: resolution must be a multiple of 4, at least 16");

    ToyTrainResult res;
    res.weights = init_preset_weights(preset, opt.train.seed);
    init_training_weights(res.weights, preset, opt.train.seed);

    const ToyDataset data(opt.resolution, opt.train.seed);
    std::vector<ToySample> frames;
    for (int tfr = 0; tfr < opt.num_frames; ++tfr) frames.push_back(data.frame(tfr));

    {
        double acc = 0.0;
        for (size_t i = 1; i < frames.size(); ++i)
            acc += psnr(frames[0].image, frames[i].image);
        res.baseline_psnr = static_cast<float>(acc / (frames.size() - 1));
    }

    Optimizer optim(opt.train.optimizer, opt.train.learning_rate);
    Rng rng(opt.train.seed + 17);
    FeatureBank bank = training_bank(frames, res.weights, preset, opt.train);

    for (int step = 0; step < opt.steps; ++step) {
        if (step > 0 && opt.bank_refresh > 0 && step % opt.bank_refresh == 0)
            bank = training_bank(frames, res.weights, preset, opt.train);
        std::vector<TrainExample> batch;
        for (int b = 0; b < opt.train.batch_size; ++b) {
            const int d = rng.uniform_int(1, opt.num_frames - 1);
            batch.push_back({&frames[0], &frames[static_cast<size_t>(d)]});
        }
        const LossReport r = train_step(batch, res.weights, optim, opt.train, preset, bank, rng);
        res.history.push_back(r);
        if (log)
            *log << "{\"step\":" << step << ",\"percep\":" << r.percep << ",\"l1\":" << r.l1
                 << ",\"kp\":" << r.kp << ",\"eq\":" << r.eq << ",\"landmark\":" << r.landmark
                 << ",\"mask\":" << r.mask << ",\"total\":" << r.total << "}\n";
    }

    const int window =
        std::max<int>(1, std::min<int>(20, static_cast<int>(res.history.size()) / 2));
    double first = 0, last = 0;
    for (int i = 0; i < window; ++i) {
        first += res.history[static_cast<size_t>(i)].total;
        last += res.history[res.history.size() - 1 - static_cast<size_t>(i)].total;
    }
    res.initial_loss = static_cast<float>(first / window);
    res.final_loss = static_cast<float>(last / window);
    res.final_psnr = evaluate_toy(frames, res.weights, preset, opt.train);
    res.final_recon = evaluate_toy_loss(frames, res.weights, preset, opt.train);
    return res;
}

}  // namespace mp
