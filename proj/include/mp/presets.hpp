#pragma once

#include <string>
#include <vector>

#include "mp/motion.hpp"
#include "mp/nets.hpp"

namespace mp {

// One network layer as counted by the analytic FLOPs model. A MAC costs 2
// FLOPs; bias adds and activations cost 1 FLOP per output element.
struct ConvLayerDesc {
    std::string name;
    int cin, cout, kh, kw, out_h, out_w;
    bool activation;

    int64_t macs() const {
        return static_cast<int64_t>(cout) * cin * kh * kw * out_h * out_w;
    }
    int64_t flops() const {
        const int64_t out_elems = static_cast<int64_t>(cout) * out_h * out_w;
        int64_t f = static_cast<int64_t>(2) * cout * cin * kh * kw * out_h * out_w;
        f += out_elems;                       // bias adds
        if (activation) f += out_elems;       // 1 FLOP per element
        return f;
    }
    int64_t params() const { return static_cast<int64_t>(cout) * cin * kh * kw + cout; }
};

struct LinearLayerDesc {
    std::string name;
    int in, out;
    bool activation;

    int64_t flops() const {
        int64_t f = static_cast<int64_t>(2) * in * out + out;
        if (activation) f += out;
        return f;
    }
    int64_t params() const { return static_cast<int64_t>(in) * out + out; }
};

struct StageCount {
    std::string stage;
    int64_t flops = 0;
    int64_t params = 0;
};

struct FlopsReport {
    std::vector<StageCount> stages;

    int64_t total_flops() const {
        int64_t t = 0;
        for (const auto& s : stages) t += s.flops;
        return t;
    }
    int64_t total_params() const {
        int64_t t = 0;
        for (const auto& s : stages) t += s.params;
        return t;
    }
    const StageCount& stage(const std::string& name) const {
        for (const auto& s : stages)
            if (s.stage == name) return s;
        throw ContractError("flops report: no stage named " + name);
    }
};

// Frozen channel schedules per compute budget. The published budgets are
// declared targets; instantiated networks must land within +-25% of both the
// GFLOPs and the parameter figure.
struct PresetConfig {
    std::string name;
    int resolution;
    UNetSpec dmn;
    UNetSpec synth;
    NkDetectorSpec nk;
    MergerSpec merger;
    double target_gflops;
    double target_params_m;
};

namespace presets {

constexpr int kDmnInChannels = kNumNeuralKeypoints + 3 * kNumCandidates + 2;  // 85
constexpr int kDmnOutChannels = kNumCandidates + 3;                           // 14
constexpr int kSynthInChannels = 7;

inline UNetSpec make_dmn_spec(std::vector<int> enc, int bneck) {
    UNetSpec s;
    s.in_ch = kDmnInChannels;
    s.out_ch = kDmnOutChannels;
    s.enc = std::move(enc);
    s.bottleneck_convs = bneck;
    s.zero_init_out = true;
    return s;
}

inline UNetSpec make_synth_spec(std::vector<int> enc, int bneck) {
    UNetSpec s;
    s.in_ch = kSynthInChannels;
    s.out_ch = 3;
    s.enc = std::move(enc);
    s.bottleneck_convs = bneck;
    s.fusion = true;
    return s;
}

}  // namespace presets

inline PresetConfig preset_by_name(const std::string& name) {
    using namespace presets;
    if (name == "large")
        return {"large", 512,
                make_dmn_spec({24, 48, 64, 96, 128, 192, 320}, 2),
                make_synth_spec({12, 24, 40, 64, 96, 160, 320, 960}, 4),
                NkDetectorSpec{{24, 48, 96, 96}}, MergerSpec{256}, 16.0, 67.7};
    if (name == "medium")
        return {"medium", 512,
                make_dmn_spec({16, 32, 48, 72, 96, 144, 224}, 2),
                make_synth_spec({8, 16, 32, 48, 72, 128, 256, 752}, 3),
                NkDetectorSpec{{16, 32, 64, 64}}, MergerSpec{256}, 7.0, 40.8};
    if (name == "small")
        return {"small", 512,
                make_dmn_spec({12, 24, 40, 56, 80, 112, 176}, 1),
                make_synth_spec({6, 12, 24, 40, 56, 96, 192, 592}, 3),
                NkDetectorSpec{{12, 24, 48, 48}}, MergerSpec{256}, 4.0, 25.5};
    if (name == "toy")
        return {"toy", 64, make_dmn_spec({24, 32}, 1), make_synth_spec({12, 16, 24, 32}, 1),
                NkDetectorSpec{{8, 16, 16}}, MergerSpec{64}, 0.0, 0.0};
    throw FormatError("unknown preset: " + name + " (expected large|medium|small|toy)");
}

inline std::vector<PresetConfig> preset_catalog() {
    return {preset_by_name("large"), preset_by_name("medium"), preset_by_name("small")};
}

namespace presets {

inline std::vector<ConvLayerDesc> unet_layers(const UNetSpec& spec, const std::string& prefix,
                                              int res_h, int res_w) {
    std::vector<ConvLayerDesc> out;
    int prev = spec.in_ch;
    for (int i = 0; i < spec.levels(); ++i) {
        out.push_back({prefix + ".enc" + std::to_string(i), prev,
                       spec.enc[static_cast<size_t>(i)], 3, 3, res_h >> i, res_w >> i, true});
        prev = spec.enc[static_cast<size_t>(i)];
    }
    const int hb = res_h >> (spec.levels() - 1), wb = res_w >> (spec.levels() - 1);
    for (int j = 0; j < spec.bottleneck_convs; ++j)
        out.push_back({prefix + ".bneck" + std::to_string(j), prev, prev, 3, 3, hb, wb, true});
    for (int i = spec.levels() - 1; i >= 1; --i)
        out.push_back({prefix + ".dec" + std::to_string(i),
                       spec.enc[static_cast<size_t>(i)] + spec.enc[static_cast<size_t>(i - 1)],
                       spec.enc[static_cast<size_t>(i - 1)], 3, 3, res_h >> (i - 1),
                       res_w >> (i - 1), true});
    out.push_back({prefix + ".out", spec.enc[0], spec.out_ch, 3, 3, res_h, res_w, false});
    return out;
}

inline ConvLayerDesc fusion_layer(const UNetSpec& spec, int res_h, int res_w) {
    const int hb = res_h >> (spec.levels() - 1), wb = res_w >> (spec.levels() - 1);
    return {"synth.fuse", 2 * spec.bottleneck_ch(), spec.bottleneck_ch(), 3, 3, hb, wb, true};
}

inline std::vector<ConvLayerDesc> nk_layers(const NkDetectorSpec& spec, int res) {
    std::vector<ConvLayerDesc> out;
    int prev = 3, h = res;
    for (size_t i = 0; i < spec.chans.size(); ++i) {
        h /= 2;
        out.push_back({"nk.conv" + std::to_string(i), prev, spec.chans[i], 3, 3, h, h, true});
        prev = spec.chans[i];
    }
    out.push_back({"nk.out", prev, kNumNeuralKeypoints, 3, 3, h, h, false});
    return out;
}

inline std::vector<LinearLayerDesc> merger_layers(const MergerSpec& spec) {
    const int in = 2 * (kNumNeuralKeypoints + kNumFacialKeypoints);
    return {{"merger.fc0", in, spec.hidden, true},
            {"merger.fc1", spec.hidden, spec.hidden, true},
            {"merger.fc2", spec.hidden, 2 * kNumMixedKeypoints, false}};
}

}  // namespace presets

// Analytic per-stage FLOPs and parameter counts for one frame of inference.
// Only network layers are counted (convolutions, fully connected layers,
// activations); sampling and heatmap construction are not part of the budget.
// The synthesis fusion conv is reported as its own stage: it is the only term
// the multiview bank touches, and its cost does not depend on the number of
// views (bank averaging happens once, offline).
inline FlopsReport count_flops(const PresetConfig& preset, int resolution, int num_views = 4) {
    require(resolution >= (1 << (preset.synth.levels() - 1)) &&
                resolution / 4 >= (1 << (preset.dmn.levels() - 1)) && resolution % 4 == 0,
            "count_flops: resolution too small for the preset's network depths");
    require(num_views == 0 || num_views == 2 || num_views == 4 || num_views == 8,
            "count_flops: supported view counts are 0, 2, 4, 8");
    FlopsReport r;
    StageCount nk{"nk_detect", 0, 0};
    for (const auto& l : presets::nk_layers(preset.nk, resolution)) {
        nk.flops += l.flops();
        nk.params += l.params();
    }
    r.stages.push_back(nk);

    StageCount mg{"merger", 0, 0};
    for (const auto& l : presets::merger_layers(preset.merger)) {
        mg.flops += l.flops();
        mg.params += l.params();
    }
    r.stages.push_back(mg);

    StageCount dm{"dense_motion", 0, 0};
    for (const auto& l : presets::unet_layers(preset.dmn, "dmn", resolution / 4, resolution / 4)) {
        dm.flops += l.flops();
        dm.params += l.params();
    }
    r.stages.push_back(dm);

    StageCount sy{"synthesis", 0, 0};
    for (const auto& l : presets::unet_layers(preset.synth, "synth", resolution, resolution)) {
        sy.flops += l.flops();
        sy.params += l.params();
    }
    r.stages.push_back(sy);

    const auto fuse = presets::fusion_layer(preset.synth, resolution, resolution);
    r.stages.push_back({"synthesis_fusion", fuse.flops(), fuse.params()});
    return r;
}

// Full inference weight set for a preset (aux heads and training-only pieces
// are initialized separately by the training module).
inline ModelWeights init_preset_weights(const PresetConfig& preset, uint64_t seed) {
    ModelWeights w;
    Rng rng(seed);
    nets::init_nk_detector(w, preset.nk, rng);
    nets::init_merger(w, preset.merger, rng);
    nets::init_unet(w, preset.dmn, "dmn", rng);
    nets::init_unet(w, preset.synth, "synth", rng);
    return w;
}

}  // namespace mp
