#pragma once

#include "mp/keypoints.hpp"

namespace mp {

// Procedural desk-scale portraits: a textured ellipse head with eye and mouth
// features over a static patterned background. Every supervision signal
// (foreground mask, 106 landmarks, true background) is analytic, and motion
// is a scripted smooth pose trajectory, so the whole training loop can be
// verified without external data.
//
// Two foreground elements move with their own phases and are deliberately
// absent from the landmark set, mimicking real footage where hair and
// shoulders move without annotation: a "tuft" blob above the head and a wide
// "shoulder" band below it. Their poses can only be recovered from the
// driving image itself, so detected keypoints carry information that the
// landmarks alone cannot.
struct ToySample {
    Tensor image;       // [1,3,H,W] in [0,1]
    Tensor background;  // [1,3,H,W] true background
    Tensor fg_mask;     // [1,1,H,W] binary
    Tensor lm_mask;     // [1,1,H,W] binary landmark disks
    KeypointSet fk;     // 106 landmarks, normalized coords
};

class ToyDataset {
  public:
    ToyDataset(int resolution, uint64_t seed) : res_(resolution), seed_(seed) {
        Rng rng(seed);
        for (int c = 0; c < 3; ++c) {
            bg_freq_[c] = 2.f + 2.f * rng.uniform();
            bg_phase_[c] = rng.uniform(0.f, 6.28f);
            bg_level_[c] = 0.35f + 0.3f * rng.uniform();
            head_tone_[c] = 0.45f + 0.4f * rng.uniform();
        }
        tex_freq_ = 6.f + 4.f * rng.uniform();
        tex_phase_ = rng.uniform(0.f, 6.28f);
        base_cx_ = rng.uniform(-0.08f, 0.08f);
        base_cy_ = rng.uniform(-0.08f, 0.08f);
        motion_phase_ = rng.uniform(0.f, 6.28f);
        tuft_phase_ = rng.uniform(0.f, 6.28f);
        shoulder_phase_ = rng.uniform(0.f, 6.28f);
        for (int c = 0; c < 3; ++c) {
            tuft_tone_[c] = 0.1f + 0.2f * rng.uniform();
            // always dark against the 0.35..0.65 background band, so a
            // mis-predicted shoulder costs the same at every seed
            shoulder_tone_[c] = 0.05f + 0.12f * rng.uniform();
        }
    }

    int resolution() const { return res_; }

    struct Pose {
        float cx, cy;     // center, normalized coords
        float ax, ay;     // ellipse semi-axes, normalized
        float angle;      // radians
        float mouth_open; // 0..1, scripted local deformation
        float tuft_dx, tuft_dy;  // independent swing, not in the landmarks
        float shoulder_dx;       // independent shoulder sway, not annotated
    };

    Pose pose(int t) const {
        const float ft = static_cast<float>(t);
        Pose p;
        p.cx = base_cx_ + 0.12f * std::sin(0.6f * ft + motion_phase_);
        p.cy = base_cy_ + 0.10f * std::cos(0.45f * ft + motion_phase_);
        p.angle = 0.18f * std::sin(0.35f * ft + 0.7f);
        const float s = 1.f + 0.08f * std::sin(0.5f * ft + 1.3f);
        p.ax = 0.34f * s;
        p.ay = 0.46f * s;
        p.mouth_open = 0.5f + 0.5f * std::sin(0.8f * ft + motion_phase_);
        // high enough frequencies that even a handful of consecutive frames
        // samples well-spread tuft and shoulder positions for every phase
        p.tuft_dx = 0.22f * std::sin(1.35f * ft + tuft_phase_);
        p.tuft_dy = 0.05f * std::sin(0.7f * ft + 1.1f * tuft_phase_);
        p.shoulder_dx = 0.3f * std::sin(1.15f * ft + shoulder_phase_);
        return p;
    }

    // tuft center in image coordinates: anchored above the head, plus swing
    static Point tuft_center(const Pose& p) {
        const float ca = std::cos(p.angle), sa = std::sin(p.angle);
        const float ly = -1.25f * p.ay;
        return {p.cx - sa * ly + p.tuft_dx, p.cy + ca * ly + p.tuft_dy};
    }

    ToySample frame(int t) const {
        const Pose p = pose(t);
        const int H = res_, W = res_;
        ToySample s{Tensor({1, 3, H, W}), Tensor({1, 3, H, W}), Tensor({1, 1, H, W}),
                    Tensor({1, 1, H, W}), landmarks(p)};
        const float ca = std::cos(p.angle), sa = std::sin(p.angle);
        const Point tc = tuft_center(p);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float nx = W > 1 ? -1.f + 2.f * x / (W - 1) : 0.f;
                const float ny = H > 1 ? -1.f + 2.f * y / (H - 1) : 0.f;
                // head-local coordinates (unit disk is the head)
                const float dx = nx - p.cx, dy = ny - p.cy;
                const float lx = (ca * dx + sa * dy) / p.ax;
                const float ly = (-sa * dx + ca * dy) / p.ay;
                const bool inside = lx * lx + ly * ly <= 1.f;
                const float tx = nx - tc[0], ty = ny - tc[1];
                const bool in_tuft = !inside && tx * tx + ty * ty <= kTuftR * kTuftR;
                const float shx = (nx - 0.6f * p.cx - p.shoulder_dx) / 0.62f;
                const float shy = (ny - 1.15f) / 0.42f;
                const bool in_shoulder = !inside && shx * shx + shy * shy <= 1.f;
                for (int c = 0; c < 3; ++c) {
                    const float bg =
                        bg_level_[c] + 0.18f * std::sin(bg_freq_[c] * (nx + 0.6f * ny) +
                                                        bg_phase_[c]);
                    s.background.at(0, c, y, x) = clampf(bg, 0.f, 1.f);
                    float v = bg;
                    if (inside) {
                        v = head_tone_[c] +
                            0.12f * std::sin(tex_freq_ * lx + tex_phase_) *
                                std::cos(tex_freq_ * 0.8f * ly);
                        if (in_eye(lx, ly, -1.f) || in_eye(lx, ly, 1.f)) v = 0.08f;
                        if (in_mouth(lx, ly, p.mouth_open)) v = c == 0 ? 0.55f : 0.15f;
                    } else if (in_tuft) {
                        // textured in tuft-local coordinates so mis-placed
                        // flow is visible, not just a flat-color shift
                        v = tuft_tone_[c] +
                            0.15f * std::sin(18.f * tx + tex_phase_) * std::cos(14.f * ty);
                    } else if (in_shoulder) {
                        v = shoulder_tone_[c] +
                            0.25f * std::sin(11.f * shx + tex_phase_) * std::cos(9.f * shy);
                    }
                    s.image.at(0, c, y, x) = clampf(v, 0.f, 1.f);
                }
                s.fg_mask.at(0, 0, y, x) = inside || in_tuft || in_shoulder ? 1.f : 0.f;
            }
        const int radius = std::max(1, res_ * 2 / 64);
        s.lm_mask = rasterize_landmark_mask(s.fk, H, W, radius);
        return s;
    }

    KeypointTrack make_track(int num_frames) const {
        KeypointTrack track;
        for (int t = 0; t < num_frames; ++t)
            track.frames.push_back(TrackFrame{t, landmarks(pose(t)), std::nullopt});
        return track;
    }

    // 106-point layout in head-local coordinates: 72 on the boundary,
    // 2 x 8 around the eyes, 18 around the mouth.
    KeypointSet landmarks(const Pose& p) const {
        std::vector<Point> pts;
        pts.reserve(kNumFacialKeypoints);
        auto to_image = [&](float lx, float ly) -> Point {
            const float ca = std::cos(p.angle), sa = std::sin(p.angle);
            const float dx = lx * p.ax, dy = ly * p.ay;
            return {clampf(p.cx + ca * dx - sa * dy, -1.f, 1.f),
                    clampf(p.cy + sa * dx + ca * dy, -1.f, 1.f)};
        };
        for (int i = 0; i < 72; ++i) {
            const float a = 6.28318530718f * i / 72.f;
            pts.push_back(to_image(std::cos(a), std::sin(a)));
        }
        for (float side : {-1.f, 1.f})
            for (int i = 0; i < 8; ++i) {
                const float a = 6.28318530718f * i / 8.f;
                pts.push_back(to_image(side * kEyeX + kEyeR * std::cos(a),
                                       kEyeY + kEyeR * std::sin(a)));
            }
        for (int i = 0; i < 18; ++i) {
            const float a = 6.28318530718f * i / 18.f;
            pts.push_back(to_image(kMouthW * std::cos(a),
                                   kMouthY + kMouthH * (0.4f + 0.6f * p.mouth_open) *
                                                 std::sin(a)));
        }
        return KeypointSet(std::move(pts), KeypointKind::facial);
    }

  private:
    static constexpr float kEyeX = 0.38f, kEyeY = -0.28f, kEyeR = 0.14f;
    static constexpr float kMouthY = 0.45f, kMouthW = 0.32f, kMouthH = 0.16f;
    static constexpr float kTuftR = 0.18f;

    static bool in_eye(float lx, float ly, float side) {
        const float dx = lx - side * kEyeX, dy = ly - kEyeY;
        return dx * dx + dy * dy <= kEyeR * kEyeR;
    }
    static bool in_mouth(float lx, float ly, float open) {
        const float h = kMouthH * (0.4f + 0.6f * open);
        const float dx = lx / kMouthW, dy = (ly - kMouthY) / h;
        return dx * dx + dy * dy <= 1.f;
    }

    int res_;
    uint64_t seed_;
    float bg_freq_[3], bg_phase_[3], bg_level_[3], head_tone_[3];
    float tex_freq_, tex_phase_;
    float base_cx_, base_cy_, motion_phase_;
    float tuft_phase_, tuft_tone_[3];
    float shoulder_phase_, shoulder_tone_[3];
};

}  // namespace mp
