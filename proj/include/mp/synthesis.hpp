#pragma once

#include "mp/motion.hpp"
#include "mp/nets.hpp"

namespace mp {

// Pseudo multiview features at the synthesis bottleneck.
struct FeatureBank {
    std::vector<Tensor> views;

    int count() const { return static_cast<int>(views.size()); }

    // All views share one shape; returns zeros of `like` when empty.
    Tensor average(const std::vector<int>& like_shape) const {
        if (views.empty()) return Tensor(like_shape);
        Tensor avg(views[0].shape);
        for (const Tensor& v : views) {
            check_same_shape(v, avg, "feature bank view");
            for (size_t i = 0; i < avg.data.size(); ++i) avg.data[i] += v.data[i];
        }
        const float inv = 1.f / static_cast<float>(views.size());
        for (auto& x : avg.data) x *= inv;
        return avg;
    }

    // Serialized via the ModelWeights container with names bank.view.<i>.
    void save(const std::string& path) const {
        ModelWeights w;
        for (size_t i = 0; i < views.size(); ++i)
            w.set("bank.view." + std::to_string(i), views[i]);
        w.save(path);
    }

    static FeatureBank load(const std::string& path) {
        const ModelWeights w = ModelWeights::load(path);
        FeatureBank bank;
        for (int i = 0;; ++i) {
            const std::string name = "bank.view." + std::to_string(i);
            if (!w.has(name)) break;
            bank.views.push_back(w.get(name));
        }
        if (bank.views.size() != w.entries.size())
            throw FormatError("feature bank file: unexpected entries beyond bank.view.<i>");
        return bank;
    }
};

// Precomputed appearance inputs: inpainted background, foreground mask, bank.
struct AppearanceKnowledge {
    Tensor inpainted_bg;  // [1,3,H,W] in [0,1]
    Tensor fg_mask;       // [1,1,H,W] in [0,1]
    FeatureBank bank;

    void validate() const {
        require(inpainted_bg.rank() == 4 && inpainted_bg.dim(1) == 3,
                "appearance: background must be [1,3,H,W]");
        require(fg_mask.rank() == 4 && fg_mask.dim(1) == 1 &&
                    fg_mask.dim(2) == inpainted_bg.dim(2) &&
                    fg_mask.dim(3) == inpainted_bg.dim(3),
                "appearance: fg mask must be [1,1,H,W] matching the background");
        if (!inpainted_bg.all_finite()) throw NumericError("appearance: non-finite background");
        for (float v : fg_mask.data)
            if (!(v >= 0.f && v <= 1.f)) throw ContractError("appearance: fg mask outside [0,1]");
    }
};

// Synthesis U-Net on the tape: 7-channel input (warped, background, mask),
// multiview bank fused at the bottleneck, sigmoid RGB output.
inline Tape::Id synthesize_forward(ParamBinder& P, const UNetSpec& synth, Tape::Id warped,
                                   Tape::Id bg, Tape::Id fg_mask, Tape::Id bank_avg) {
    Tape& t = P.tape();
    require(synth.fusion, "synthesize: synthesis spec must enable bank fusion");
    const Tape::Id input = t.concat_channels({warped, bg, fg_mask});
    const auto net = nets::unet_forward(P, synth, "synth", input, bank_avg);
    return t.sigmoid(net.out);
}

inline Tensor synthesize(const Tensor& warped, const AppearanceKnowledge& knowledge,
                         const ModelWeights& weights, const UNetSpec& synth) {
    knowledge.validate();
    require(warped.rank() == 4 && warped.dim(1) == 3, "synthesize: warped must be [1,3,H,W]");
    check_same_shape(warped, knowledge.inpainted_bg, "synthesize inputs");
    Tape t;
    ParamBinder P(t, weights, false);
    const int hb = warped.dim(2) >> (synth.levels() - 1);
    const int wb = warped.dim(3) >> (synth.levels() - 1);
    const Tensor avg = knowledge.bank.average({1, synth.bottleneck_ch(), hb, wb});
    if (avg.dim(1) != synth.bottleneck_ch() || avg.dim(2) != hb || avg.dim(3) != wb)
        throw ContractError("synthesize: bank shape " + avg.shape_str() +
                            " does not match bottleneck [1," +
                            std::to_string(synth.bottleneck_ch()) + "," + std::to_string(hb) +
                            "," + std::to_string(wb) + "]");
    const Tape::Id out = synthesize_forward(P, synth, t.put(warped), t.put(knowledge.inpainted_bg),
                                            t.put(knowledge.fg_mask), t.put(avg));
    return t.val(out);
}

// One bank view: run motion generation for the sampled driving keypoints,
// warp the source, then push the 7-channel synthesis input through the
// encoder (down path + bottleneck convs, before fusion).
inline FeatureBank precompute_bank(const Tensor& source, const KeypointSet& s_mixed,
                                   const std::vector<KeypointSet>& driving_samples,
                                   const Tensor& bg, const Tensor& fg_mask,
                                   const Tensor& lm_mask, const ModelWeights& weights,
                                   const UNetSpec& dmn, const UNetSpec& synth) {
    FeatureBank bank;
    for (const KeypointSet& d_mixed : driving_samples) {
        const DenseMotionOutput mo =
            dense_motion(source, s_mixed, d_mixed, fg_mask, lm_mask, weights, dmn, false);
        const Tensor warped = warp_and_occlude(source, mo.motion);
        Tape t;
        ParamBinder P(t, weights, false);
        const Tape::Id input =
            t.concat_channels({t.put(warped), t.put(bg), t.put(fg_mask)});
        bank.views.push_back(t.val(nets::unet_encode(P, synth, "synth", input)));
    }
    return bank;
}

struct CompositeDiagnostics {
    float background_adherence;  // mean |output - bg| where fg_mask < 0.1
    int64_t background_pixels;
};

inline CompositeDiagnostics composite_check(const Tensor& output,
                                            const AppearanceKnowledge& knowledge) {
    check_same_shape(output, knowledge.inpainted_bg, "composite_check");
    const int C = output.dim(1), H = output.dim(2), W = output.dim(3);
    double acc = 0.0;
    int64_t count = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (knowledge.fg_mask.at(0, 0, y, x) >= 0.1f) continue;
            ++count;
            for (int c = 0; c < C; ++c)
                acc += std::fabs(output.at(0, c, y, x) - knowledge.inpainted_bg.at(0, c, y, x));
        }
    CompositeDiagnostics d;
    d.background_pixels = count;
    d.background_adherence =
        count > 0 ? static_cast<float>(acc / (static_cast<double>(count) * C)) : 0.f;
    return d;
}

}  // namespace mp
