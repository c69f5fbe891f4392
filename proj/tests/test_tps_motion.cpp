#include <cstring>

#include <catch2/catch_amalgamated.hpp>

#include "mp/motion.hpp"
#include "mp/presets.hpp"

using namespace mp;

namespace {

std::array<Point, 5> random_points(Rng& rng, float lo = -0.9f, float hi = 0.9f) {
    std::array<Point, 5> pts;
    for (auto& p : pts) p = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
    return pts;
}

// minimum pairwise distance, to skip near-degenerate draws
float min_dist(const std::array<Point, 5>& pts) {
    float m = 1e9f;
    for (size_t i = 0; i < pts.size(); ++i)
        for (size_t j = i + 1; j < pts.size(); ++j) {
            const float dx = pts[i][0] - pts[j][0], dy = pts[i][1] - pts[j][1];
            m = std::min(m, std::sqrt(dx * dx + dy * dy));
        }
    return m;
}

}  // namespace

TEST_CASE("1000 random TPS fits satisfy the interpolation constraint") {
    Rng rng(101);
    int done = 0;
    while (done < 1000) {
        const auto src = random_points(rng);
        const auto dst = random_points(rng);
        if (min_dist(src) < 0.05f) continue;
        TpsTransform t;
        try {
            t = fit_tps(src, dst);
        } catch (const TpsDegenerateError&) {
            continue;  // the fit may reject ill-conditioned draws
        }
        for (int i = 0; i < 5; ++i) {
            const Point q = tps_apply_point(t, src[static_cast<size_t>(i)]);
            REQUIRE(std::fabs(q[0] - dst[static_cast<size_t>(i)][0]) <= 1e-5f);
            REQUIRE(std::fabs(q[1] - dst[static_cast<size_t>(i)][1]) <= 1e-5f);
        }
        ++done;
    }
}

TEST_CASE("affine-generated pairs yield vanishing radial weights") {
    Rng rng(102);
    int done = 0;
    while (done < 200) {
        const auto src = random_points(rng);
        if (min_dist(src) < 0.1f) continue;
        const float a = rng.uniform(-1.f, 1.f), b = rng.uniform(-0.5f, 0.5f),
                    c = rng.uniform(-0.3f, 0.3f);
        const float d = rng.uniform(-0.5f, 0.5f), e = rng.uniform(-1.f, 1.f),
                    f = rng.uniform(-0.3f, 0.3f);
        std::array<Point, 5> dst;
        for (size_t i = 0; i < 5; ++i)
            dst[i] = {a * src[i][0] + b * src[i][1] + c, d * src[i][0] + e * src[i][1] + f};
        TpsTransform t;
        try {
            t = fit_tps(src, dst);
        } catch (const TpsDegenerateError&) {
            continue;
        }
        for (const auto& w : t.radial) {
            REQUIRE(std::fabs(w[0]) <= 1e-5f);
            REQUIRE(std::fabs(w[1]) <= 1e-5f);
        }
        ++done;
    }
}

TEST_CASE("bitwise-identical control points produce the exact identity") {
    Rng rng(103);
    const auto src = random_points(rng);
    const TpsTransform t = fit_tps(src, src);
    REQUIRE(t.is_identity());
    const Point p{0.123f, -0.456f};
    const Point q = tps_apply_point(t, p);
    REQUIRE(q[0] == p[0]);
    REQUIRE(q[1] == p[1]);
}

TEST_CASE("degenerate control configurations raise TpsDegenerateError") {
    // all five points collinear
    std::array<Point, 5> src;
    for (int i = 0; i < 5; ++i)
        src[static_cast<size_t>(i)] = {-0.8f + 0.4f * i, -0.4f + 0.2f * i};
    std::array<Point, 5> dst;
    Rng rng(104);
    for (auto& p : dst) p = {rng.uniform(-0.9f, 0.9f), rng.uniform(-0.9f, 0.9f)};
    REQUIRE_THROWS_AS(fit_tps(src, dst), TpsDegenerateError);

    // coincident points
    auto dup = src;
    dup[1] = dup[0];
    REQUIRE_THROWS_AS(fit_tps(dup, dst), TpsDegenerateError);
}

TEST_CASE("build_candidates: identity first, grouped TPS fits after") {
    Rng rng(105);
    std::vector<Point> sp(kNumMixedKeypoints), dp(kNumMixedKeypoints);
    for (auto& p : sp) p = {rng.uniform(-0.9f, 0.9f), rng.uniform(-0.9f, 0.9f)};
    for (size_t i = 0; i < dp.size(); ++i)
        dp[i] = {clampf(sp[i][0] + 0.1f, -1.f, 1.f), sp[i][1]};
    const KeypointSet s(sp, KeypointKind::mixed), d(dp, KeypointKind::mixed);
    int degenerate = -1;
    const auto cands = build_candidates(s, d, 8, 8, &degenerate);
    REQUIRE(cands.size() == static_cast<size_t>(kNumCandidates));
    REQUIRE(degenerate >= 0);
    const Tensor id = ops::identity_grid(8, 8);
    REQUIRE(cands[0].data == id.data);
    // some group must deviate from the identity (pure translation case)
    bool any_nonid = false;
    for (size_t k = 1; k < cands.size(); ++k)
        if (cands[k].data != id.data) any_nonid = true;
    REQUIRE(any_nonid);
}

TEST_CASE("degenerate keypoint groups fall back to identity and are counted") {
    std::vector<Point> sp(kNumMixedKeypoints), dp(kNumMixedKeypoints);
    Rng rng(106);
    for (auto& p : sp) p = {rng.uniform(-0.9f, 0.9f), rng.uniform(-0.9f, 0.9f)};
    for (auto& p : dp) p = {rng.uniform(-0.9f, 0.9f), rng.uniform(-0.9f, 0.9f)};
    // make group 0 of the driving points coincident -> singular kernel
    for (int i = 0; i < kTpsGroupSize; ++i) dp[static_cast<size_t>(i)] = {0.25f, 0.25f};
    const KeypointSet s(sp, KeypointKind::mixed), d(dp, KeypointKind::mixed);
    int degenerate = 0;
    const auto cands = build_candidates(s, d, 6, 6, &degenerate);
    REQUIRE(degenerate >= 1);
    REQUIRE(cands[1].data == ops::identity_grid(6, 6).data);
}

TEST_CASE("identity-motion fixed point: flow is exactly the identity grid") {
    const PresetConfig preset = preset_by_name("toy");
    const ModelWeights w = init_preset_weights(preset, 11);  // dmn.out zero-initialized
    Rng rng(107);
    Tensor source({1, 3, 64, 64});
    for (auto& v : source.data) v = rng.uniform();
    std::vector<Point> pts(kNumMixedKeypoints);
    for (auto& p : pts) p = {rng.uniform(-0.9f, 0.9f), rng.uniform(-0.9f, 0.9f)};
    const KeypointSet kps(pts, KeypointKind::mixed);
    Tensor fg({1, 1, 64, 64}), lm({1, 1, 64, 64});
    for (auto& v : fg.data) v = rng.uniform();

    const DenseMotionOutput mo = dense_motion(source, kps, kps, fg, lm, w, preset.dmn, false);

    const Tensor id_flow = motion_detail::identity_flow(64, 64);
    REQUIRE(std::memcmp(mo.motion.flow.data.data(), id_flow.data.data(),
                        id_flow.data.size() * sizeof(float)) == 0);
    // warped-before-occlusion equals the source bitwise
    const Tensor warped =
        ops::grid_sample(source, motion_detail::flow_to_grid(mo.motion.flow));
    REQUIRE(std::memcmp(warped.data.data(), source.data.data(),
                        source.data.size() * sizeof(float)) == 0);
    // zero occlusion logits -> sigmoid(0) = 0.5 everywhere
    for (float v : mo.motion.occlusion.data) REQUIRE(v == 0.5f);
    // contributions a proper softmax: uniform 1/11 with zero logits
    for (float v : mo.contributions.data)
        REQUIRE(v == Catch::Approx(1.f / kNumCandidates).margin(1e-6));
}

TEST_CASE("warp_and_occlude applies the gate after sampling") {
    Rng rng(108);
    Tensor source({1, 3, 8, 8});
    for (auto& v : source.data) v = rng.uniform();
    MotionField m;
    m.flow = motion_detail::identity_flow(8, 8);
    m.occlusion = Tensor({1, 1, 8, 8});
    for (auto& v : m.occlusion.data) v = 0.25f;
    const Tensor out = warp_and_occlude(source, m);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                REQUIRE(out.at(0, c, y, x) ==
                        Catch::Approx(0.25f * source.at(0, c, y, x)).margin(1e-7));
}

TEST_CASE("motion field validation rejects bad occlusion and non-finite flow") {
    MotionField m;
    m.flow = motion_detail::identity_flow(4, 4);
    m.occlusion = Tensor({1, 1, 4, 4});
    REQUIRE_NOTHROW(m.validate());
    m.occlusion.data[0] = 1.5f;
    REQUIRE_THROWS_AS(m.validate(), ContractError);
    m.occlusion.data[0] = 0.5f;
    m.flow.data[0] = std::numeric_limits<float>::infinity();
    REQUIRE_THROWS_AS(m.validate(), NumericError);
}

TEST_CASE("dense motion responds to keypoint differences") {
    const PresetConfig preset = preset_by_name("toy");
    ModelWeights w = init_preset_weights(preset, 12);
    Rng rng(109);
    // non-zero output conv so the network actually mixes candidates
    for (auto& v : w.entries.at("dmn.out.w").data) v = rng.uniform(-0.05f, 0.05f);
    Tensor source({1, 3, 32, 32});
    for (auto& v : source.data) v = rng.uniform();
    std::vector<Point> sp(kNumMixedKeypoints), dp;
    for (auto& p : sp) p = {rng.uniform(-0.8f, 0.8f), rng.uniform(-0.8f, 0.8f)};
    dp = sp;
    for (auto& p : dp) p[0] = clampf(p[0] + 0.15f, -1.f, 1.f);
    const KeypointSet s(sp, KeypointKind::mixed), d(dp, KeypointKind::mixed);
    Tensor fg({1, 1, 32, 32}), lm({1, 1, 32, 32});
    const DenseMotionOutput mo = dense_motion(source, s, d, fg, lm, w, preset.dmn, false);
    const Tensor id_flow = motion_detail::identity_flow(32, 32);
    float dev = 0.f;
    for (size_t i = 0; i < id_flow.data.size(); ++i)
        dev = std::max(dev, std::fabs(mo.motion.flow.data[i] - id_flow.data[i]));
    REQUIRE(dev > 1e-4f);  // moved keypoints must move the flow
    mo.motion.validate();
}
