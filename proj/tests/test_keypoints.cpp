#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "mp/dataset.hpp"
#include "mp/presets.hpp"

using namespace mp;

namespace {

KeypointSet random_kps(KeypointKind kind, Rng& rng) {
    std::vector<Point> pts(static_cast<size_t>(keypoint_count(kind)));
    for (auto& p : pts) p = {rng.uniform(-0.95f, 0.95f), rng.uniform(-0.95f, 0.95f)};
    return KeypointSet(std::move(pts), kind);
}

}  // namespace

TEST_CASE("keypoint sets validate counts, clamp range, reject non-finite") {
    Rng rng(1);
    REQUIRE_THROWS_AS(KeypointSet(std::vector<Point>(10), KeypointKind::facial), ContractError);
    std::vector<Point> pts(kNumNeuralKeypoints, Point{2.f, -3.f});
    const KeypointSet clamped(pts, KeypointKind::neural);
    REQUIRE(clamped.points[0][0] == 1.f);
    REQUIRE(clamped.points[0][1] == -1.f);
    pts[3][0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(KeypointSet(pts, KeypointKind::neural), ContractError);
}

TEST_CASE("merger with zero-initialized final layer returns the neural points") {
    Rng rng(2);
    const PresetConfig preset = preset_by_name("toy");
    const ModelWeights w = init_preset_weights(preset, 4);
    const KeypointSet nk = random_kps(KeypointKind::neural, rng);
    const KeypointSet fk = random_kps(KeypointKind::facial, rng);
    const KeypointSet mixed = merge_keypoints(nk, fk, w);
    REQUIRE(mixed.kind == KeypointKind::mixed);
    for (int i = 0; i < kNumMixedKeypoints; ++i) {
        REQUIRE(mixed.points[static_cast<size_t>(i)][0] ==
                nk.points[static_cast<size_t>(i)][0]);
        REQUIRE(mixed.points[static_cast<size_t>(i)][1] ==
                nk.points[static_cast<size_t>(i)][1]);
    }
}

TEST_CASE("mixed keypoints stay in [-1,1] for any merger weights") {
    Rng rng(3);
    const PresetConfig preset = preset_by_name("toy");
    ModelWeights w = init_preset_weights(preset, 4);
    for (auto& v : w.entries.at("merger.fc2.w").data) v = rng.uniform(-5.f, 5.f);
    for (auto& v : w.entries.at("merger.fc2.b").data) v = rng.uniform(-5.f, 5.f);
    const KeypointSet mixed = merge_keypoints(random_kps(KeypointKind::neural, rng),
                                              random_kps(KeypointKind::facial, rng), w);
    for (const auto& p : mixed.points) {
        REQUIRE(p[0] >= -1.f);
        REQUIRE(p[0] <= 1.f);
        REQUIRE(p[1] >= -1.f);
        REQUIRE(p[1] <= 1.f);
    }
}

TEST_CASE("nk_detect returns 50 points inside the normalized square") {
    const PresetConfig preset = preset_by_name("toy");
    const ModelWeights w = init_preset_weights(preset, 5);
    Rng rng(6);
    Tensor img({1, 3, 64, 64});
    for (auto& v : img.data) v = rng.uniform();
    const KeypointSet nk = nk_detect(img, w, preset.nk);
    REQUIRE(nk.count() == kNumNeuralKeypoints);
    for (const auto& p : nk.points) {
        REQUIRE(p[0] >= -1.f);
        REQUIRE(p[0] <= 1.f);
    }
}

TEST_CASE("soft-argmax recovers a one-hot heatmap peak") {
    // single sharp peak at a known grid cell -> detected point at that cell
    ModelWeights w;
    Rng rng(7);
    const NkDetectorSpec spec{{4}};
    nets::init_nk_detector(w, spec, rng);
    Tape t;
    Tensor logits({1, 2, 9, 9});
    for (auto& v : logits.data) v = -30.f;
    logits.at(0, 0, 2, 6) = 30.f;
    logits.at(0, 1, 4, 4) = 30.f;
    const Tensor pts = t.val(t.soft_argmax(t.put(logits)));
    REQUIRE(pts.data[0] == Catch::Approx(-1.f + 2.f * 6 / 8).margin(1e-5));
    REQUIRE(pts.data[1] == Catch::Approx(-1.f + 2.f * 2 / 8).margin(1e-5));
    REQUIRE(pts.data[2] == Catch::Approx(0.f).margin(1e-5));
    REQUIRE(pts.data[3] == Catch::Approx(0.f).margin(1e-5));
}

TEST_CASE("keypoint track round-trips through the canonical writer") {
    const ToyDataset data(32, 9);
    const KeypointTrack track = data.make_track(5);
    std::stringstream s1;
    save_keypoint_track(track, s1);
    const KeypointTrack back = load_keypoint_track(s1);
    REQUIRE(back.size() == track.size());
    std::stringstream s2;
    save_keypoint_track(back, s2);
    REQUIRE(s1.str() == s2.str());  // canonical form is a fixed point
    for (size_t i = 0; i < track.frames.size(); ++i) {
        REQUIRE(back.frames[i].frame_index == track.frames[i].frame_index);
        for (int k = 0; k < kNumFacialKeypoints; ++k)
            REQUIRE(std::fabs(back.frames[i].facial.points[static_cast<size_t>(k)][0] -
                              track.frames[i].facial.points[static_cast<size_t>(k)][0]) <=
                    1e-6f);
    }
}

TEST_CASE("keypoint track loader reports line numbers for bad input") {
    const ToyDataset data(32, 9);
    const KeypointTrack track = data.make_track(3);
    std::stringstream good;
    save_keypoint_track(track, good);
    std::string text = good.str();

    SECTION("non-increasing frame index") {
        std::stringstream s;
        KeypointTrack bad = track;
        bad.frames[2].frame_index = 1;
        save_keypoint_track(bad, s);
        REQUIRE_THROWS_MATCHES(load_keypoint_track(s), FormatError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("line 3")));
    }
    SECTION("JSON syntax error") {
        std::stringstream s(text + "{not json\n");
        REQUIRE_THROWS_MATCHES(load_keypoint_track(s), FormatError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("line 4")));
    }
    SECTION("coordinate outside the corruption bound") {
        std::stringstream s;
        s << R"({"frame":0,"fk":[)";
        for (int i = 0; i < kNumFacialKeypoints; ++i)
            s << (i ? "," : "") << (i == 50 ? "[7.0,0.0]" : "[0.1,0.2]");
        s << "]}\n";
        REQUIRE_THROWS_MATCHES(load_keypoint_track(s), FormatError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("[-1.5,1.5]")));
    }
    SECTION("wrong point count") {
        std::stringstream s(R"({"frame":0,"fk":[[0.0,0.0]]})");
        REQUIRE_THROWS_AS(load_keypoint_track(s), FormatError);
    }
}

TEST_CASE("gaussian heatmaps peak at the keypoint and integrate as expected") {
    std::vector<Point> pts(kNumNeuralKeypoints, Point{0.f, 0.f});
    pts[0] = {-1.f, -1.f};  // top-left pixel center
    pts[1] = {0.5f, -0.5f};
    const KeypointSet kps(pts, KeypointKind::neural);
    const Tensor hm = gaussian_heatmaps(kps, 17, 17, 0.1f);
    REQUIRE(hm.shape == std::vector<int>({1, kNumNeuralKeypoints, 17, 17}));
    REQUIRE(hm.at(0, 0, 0, 0) == Catch::Approx(1.f).margin(1e-6));
    // channel 1 peak at grid cell nearest (0.5,-0.5): x=12, y=4 of 17
    REQUIRE(hm.at(0, 1, 4, 12) == Catch::Approx(1.f).margin(1e-6));
    float best = 0.f;
    int bx = -1, by = -1;
    for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 17; ++x)
            if (hm.at(0, 1, y, x) > best) {
                best = hm.at(0, 1, y, x);
                bx = x;
                by = y;
            }
    REQUIRE(bx == 12);
    REQUIRE(by == 4);
    // direct formula at an off-peak cell
    const float gx = -1.f + 2.f * 10 / 16, gy = -1.f + 2.f * 6 / 16;
    const float d2 = (gx - 0.5f) * (gx - 0.5f) + (gy + 0.5f) * (gy + 0.5f);
    REQUIRE(hm.at(0, 1, 6, 10) ==
            Catch::Approx(std::exp(-d2 / (2 * 0.1f * 0.1f))).margin(1e-5));
}

TEST_CASE("landmark mask rasterizes filled disks and ignores order") {
    std::vector<Point> pts(kNumFacialKeypoints, Point{0.f, 0.f});
    pts[0] = {-1.f, -1.f};
    const KeypointSet a(pts, KeypointKind::facial);
    std::reverse(pts.begin(), pts.end());
    const KeypointSet b(pts, KeypointKind::facial);
    const Tensor ma = rasterize_landmark_mask(a, 21, 21, 2);
    const Tensor mb = rasterize_landmark_mask(b, 21, 21, 2);
    REQUIRE(ma.data == mb.data);
    REQUIRE(ma.at(0, 0, 0, 0) == 1.f);   // disk at the corner
    REQUIRE(ma.at(0, 0, 0, 2) == 1.f);   // radius reaches 2 pixels
    REQUIRE(ma.at(0, 0, 0, 3) == 0.f);
    REQUIRE(ma.at(0, 0, 10, 10) == 1.f);  // center landmark
    REQUIRE(ma.at(0, 0, 10, 13) == 0.f);
    for (float v : ma.data) REQUIRE((v == 0.f || v == 1.f));
}

TEST_CASE("procedural dataset is deterministic and self-consistent") {
    const ToyDataset a(32, 42), b(32, 42), c(32, 43);
    const ToySample fa = a.frame(3), fb = b.frame(3), fc = c.frame(3);
    REQUIRE(fa.image.data == fb.image.data);
    REQUIRE(fa.image.data != fc.image.data);
    // landmarks on the boundary lie where the mask flips
    int inside = 0;
    for (float v : fa.fg_mask.data) inside += v > 0.5f ? 1 : 0;
    REQUIRE(inside > 50);
    REQUIRE(inside < 32 * 32);
}
