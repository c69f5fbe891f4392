#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mp/keypoints.hpp"
#include "mp/tape.hpp"
#include "mp/weights.hpp"

namespace mp {

// Plain U-Net: per-level 3x3 conv + relu with bilinear 2x down/up sampling,
// skip concats on the way up, optional extra convs at the bottleneck and an
// optional fusion conv that merges an externally supplied bottleneck feature.
struct UNetSpec {
    int in_ch = 3;
    int out_ch = 3;
    std::vector<int> enc;  // channels per level; level i runs at res >> i
    int bottleneck_convs = 0;
    bool fusion = false;  // bottleneck concat(current, bank) -> conv -> bottleneck ch
    bool zero_init_out = false;

    int levels() const { return static_cast<int>(enc.size()); }
    int bottleneck_ch() const { return enc.back(); }
};

struct NkDetectorSpec {
    std::vector<int> chans;  // stride-2 conv channels; heatmap res = in >> chans.size()
};

struct MergerSpec {
    int hidden = 256;
};

// Binds ModelWeights entries into a tape on first use.
class ParamBinder {
  public:
    ParamBinder(Tape& tape, const ModelWeights& weights, bool trainable)
        : tape_(tape), weights_(weights), trainable_(trainable) {}

    Tape::Id operator()(const std::string& name) {
        auto it = ids_.find(name);
        if (it != ids_.end()) return it->second;
        const Tape::Id id = tape_.put(weights_.get(name), trainable_);
        ids_.emplace(name, id);
        return id;
    }

    // pre-seed a name with an existing tape node (gradient checks use this to
    // make single weights leaves of a larger graph)
    void bind(const std::string& name, Tape::Id id) { ids_[name] = id; }

    const std::unordered_map<std::string, Tape::Id>& bound() const { return ids_; }
    Tape& tape() { return tape_; }
    bool trainable() const { return trainable_; }

  private:
    Tape& tape_;
    const ModelWeights& weights_;
    bool trainable_;
    std::unordered_map<std::string, Tape::Id> ids_;
};

namespace nets {

inline void init_conv(ModelWeights& w, const std::string& name, int cout, int cin, int k,
                      Rng& rng, bool zero = false) {
    const float stddev = zero ? 0.f : std::sqrt(2.f / static_cast<float>(cin * k * k));
    w.set(name + ".w", zero ? Tensor({cout, cin, k, k})
                            : Tensor::randn({cout, cin, k, k}, rng, stddev));
    w.set(name + ".b", Tensor({cout}));
}

inline void init_linear(ModelWeights& w, const std::string& name, int out, int in, Rng& rng,
                        bool zero = false) {
    const float stddev = zero ? 0.f : std::sqrt(2.f / static_cast<float>(in));
    w.set(name + ".w", zero ? Tensor({out, in}) : Tensor::randn({out, in}, rng, stddev));
    w.set(name + ".b", Tensor({out}));
}

inline void init_unet(ModelWeights& w, const UNetSpec& spec, const std::string& prefix,
                      Rng& rng) {
    int prev = spec.in_ch;
    for (int i = 0; i < spec.levels(); ++i) {
        init_conv(w, prefix + ".enc" + std::to_string(i), spec.enc[static_cast<size_t>(i)],
                  prev, 3, rng);
        prev = spec.enc[static_cast<size_t>(i)];
    }
    for (int j = 0; j < spec.bottleneck_convs; ++j)
        init_conv(w, prefix + ".bneck" + std::to_string(j), prev, prev, 3, rng);
    if (spec.fusion) init_conv(w, prefix + ".fuse", prev, 2 * prev, 3, rng);
    for (int i = spec.levels() - 1; i >= 1; --i)
        init_conv(w, prefix + ".dec" + std::to_string(i), spec.enc[static_cast<size_t>(i - 1)],
                  spec.enc[static_cast<size_t>(i)] + spec.enc[static_cast<size_t>(i - 1)], 3,
                  rng);
    init_conv(w, prefix + ".out", spec.out_ch, spec.enc[0], 3, rng, spec.zero_init_out);
}

inline void init_nk_detector(ModelWeights& w, const NkDetectorSpec& spec, Rng& rng) {
    int prev = 3;
    for (size_t i = 0; i < spec.chans.size(); ++i) {
        init_conv(w, "nk.conv" + std::to_string(i), spec.chans[i], prev, 3, rng);
        prev = spec.chans[i];
    }
    init_conv(w, "nk.out", kNumNeuralKeypoints, prev, 3, rng);
}

inline void init_merger(ModelWeights& w, const MergerSpec& spec, Rng& rng) {
    const int in = 2 * (kNumNeuralKeypoints + kNumFacialKeypoints);  // 312
    init_linear(w, "merger.fc0", spec.hidden, in, rng);
    init_linear(w, "merger.fc1", spec.hidden, spec.hidden, rng);
    // zero final layer: mixed keypoints start exactly at the neural ones
    init_linear(w, "merger.fc2", 2 * kNumMixedKeypoints, spec.hidden, rng, true);
}

struct UNetOut {
    Tape::Id out;        // final conv output, full input resolution
    Tape::Id features;   // last feature map before the output conv
    Tape::Id bottleneck; // bottleneck feature (after bottleneck/fusion convs)
};

// bank: optional [1,Cb,hb,wb] bottleneck-shaped feature (pass -1 for none).
// With fusion enabled and no bank, the bank slots receive zeros.
inline UNetOut unet_forward(ParamBinder& P, const UNetSpec& spec, const std::string& prefix,
                            Tape::Id input, Tape::Id bank = -1) {
    Tape& t = P.tape();
    const Tensor& in = t.val(input);
    require(in.rank() == 4, "unet: input must be rank 4");
    if (in.dim(1) != spec.in_ch)
        throw ContractError("unet " + prefix + ": expected " + std::to_string(spec.in_ch) +
                            " input channels, got " + std::to_string(in.dim(1)));
    const int H = in.dim(2), W = in.dim(3);
    require(H >> (spec.levels() - 1) >= 1 && W >> (spec.levels() - 1) >= 1,
            "unet " + prefix + ": input too small for " + std::to_string(spec.levels()) +
                " levels");

    std::vector<Tape::Id> skips;
    Tape::Id cur = input;
    for (int i = 0; i < spec.levels(); ++i) {
        if (i > 0) cur = t.resize(cur, H >> i, W >> i, ResizeMode::bilinear);
        cur = t.relu(t.conv2d(cur, P(prefix + ".enc" + std::to_string(i) + ".w"),
                              P(prefix + ".enc" + std::to_string(i) + ".b"), 1, 1));
        skips.push_back(cur);
    }
    for (int j = 0; j < spec.bottleneck_convs; ++j)
        cur = t.relu(t.conv2d(cur, P(prefix + ".bneck" + std::to_string(j) + ".w"),
                              P(prefix + ".bneck" + std::to_string(j) + ".b"), 1, 1));
    if (spec.fusion) {
        Tape::Id bank_id = bank;
        if (bank_id < 0) bank_id = t.put(Tensor(t.val(cur).shape));  // zeros
        check_same_shape(t.val(cur), t.val(bank_id), "unet fusion bank");
        cur = t.relu(t.conv2d(t.concat_channels({cur, bank_id}), P(prefix + ".fuse.w"),
                              P(prefix + ".fuse.b"), 1, 1));
    }
    const Tape::Id bottleneck = cur;
    for (int i = spec.levels() - 1; i >= 1; --i) {
        cur = t.resize(cur, H >> (i - 1), W >> (i - 1), ResizeMode::bilinear);
        cur = t.concat_channels({cur, skips[static_cast<size_t>(i - 1)]});
        cur = t.relu(t.conv2d(cur, P(prefix + ".dec" + std::to_string(i) + ".w"),
                              P(prefix + ".dec" + std::to_string(i) + ".b"), 1, 1));
    }
    const Tape::Id features = cur;
    const Tape::Id out = t.conv2d(cur, P(prefix + ".out.w"), P(prefix + ".out.b"), 1, 1);
    return {out, features, bottleneck};
}

// Encoder-only pass (through bottleneck convs, before fusion): used to build
// the pseudo multiview feature bank.
inline Tape::Id unet_encode(ParamBinder& P, const UNetSpec& spec, const std::string& prefix,
                            Tape::Id input) {
    Tape& t = P.tape();
    const int H = t.val(input).dim(2), W = t.val(input).dim(3);
    Tape::Id cur = input;
    for (int i = 0; i < spec.levels(); ++i) {
        if (i > 0) cur = t.resize(cur, H >> i, W >> i, ResizeMode::bilinear);
        cur = t.relu(t.conv2d(cur, P(prefix + ".enc" + std::to_string(i) + ".w"),
                              P(prefix + ".enc" + std::to_string(i) + ".b"), 1, 1));
    }
    for (int j = 0; j < spec.bottleneck_convs; ++j)
        cur = t.relu(t.conv2d(cur, P(prefix + ".bneck" + std::to_string(j) + ".w"),
                              P(prefix + ".bneck" + std::to_string(j) + ".b"), 1, 1));
    return cur;
}

// Neural keypoint detection: strided conv encoder, 50 heatmap channels,
// per-channel spatial soft-argmax. Output [1,50,2] lies in [-1,1] always.
inline Tape::Id nk_detect_forward(ParamBinder& P, const NkDetectorSpec& spec, Tape::Id image) {
    Tape& t = P.tape();
    const Tensor& in = t.val(image);
    require(in.rank() == 4 && in.dim(1) == 3, "nk_detect: image must be [B,3,H,W]");
    Tape::Id cur = image;
    for (size_t i = 0; i < spec.chans.size(); ++i)
        cur = t.relu(t.conv2d(cur, P("nk.conv" + std::to_string(i) + ".w"),
                              P("nk.conv" + std::to_string(i) + ".b"), 2, 1));
    const Tape::Id logits = t.conv2d(cur, P("nk.out.w"), P("nk.out.b"), 1, 1);
    return t.soft_argmax(logits);
}

// Mixed keypoint merger: concat(nk, fk) -> MLP -> 50 residual offsets onto nk.
inline Tape::Id merger_forward(ParamBinder& P, Tape::Id nk, Tape::Id fk) {
    Tape& t = P.tape();
    require(t.val(nk).dim(1) == kNumNeuralKeypoints, "merger: nk must hold 50 points");
    require(t.val(fk).dim(1) == kNumFacialKeypoints, "merger: fk must hold 106 points");
    const Tape::Id flat =
        t.concat_flat({t.reshape(nk, {1, 2 * kNumNeuralKeypoints}),
                       t.reshape(fk, {1, 2 * kNumFacialKeypoints})});
    Tape::Id h = t.relu(t.linear(flat, P("merger.fc0.w"), P("merger.fc0.b")));
    h = t.relu(t.linear(h, P("merger.fc1.w"), P("merger.fc1.b")));
    const Tape::Id off = t.linear(h, P("merger.fc2.w"), P("merger.fc2.b"));
    const Tape::Id mixed =
        t.add(nk, t.reshape(off, {1, kNumMixedKeypoints, 2}));
    return t.clamp(mixed, -1.f, 1.f);
}

}  // namespace nets

// Convenience inference wrappers over the tape machinery.

inline KeypointSet nk_detect(const Tensor& image, const ModelWeights& weights,
                             const NkDetectorSpec& spec) {
    Tape t;
    ParamBinder P(t, weights, false);
    const Tape::Id kps = nets::nk_detect_forward(P, spec, t.put(image));
    return KeypointSet::from_tensor(t.val(kps), KeypointKind::neural);
}

inline KeypointSet merge_keypoints(const KeypointSet& nk, const KeypointSet& fk,
                                   const ModelWeights& weights) {
    require(nk.kind == KeypointKind::neural && fk.kind == KeypointKind::facial,
            "merge_keypoints: expects (neural, facial) inputs");
    Tape t;
    ParamBinder P(t, weights, false);
    const Tape::Id mixed =
        nets::merger_forward(P, t.put(nk.to_tensor()), t.put(fk.to_tensor()));
    return KeypointSet::from_tensor(t.val(mixed), KeypointKind::mixed);
}

}  // namespace mp
