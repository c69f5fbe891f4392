#include <cstdio>
#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "mp/dataset.hpp"
#include "mp/presets.hpp"
#include "mp/synthesis.hpp"
#include "mp/train.hpp"

using namespace mp;

namespace {

Tensor random_image(int c, int hw, Rng& rng) {
    Tensor t({1, c, hw, hw});
    for (auto& v : t.data) v = rng.uniform();
    return t;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("feature bank averages views and is zeros when empty") {
    Rng rng(201);
    FeatureBank bank;
    const Tensor zero = bank.average({1, 4, 2, 2});
    for (float v : zero.data) REQUIRE(v == 0.f);

    Tensor a({1, 4, 2, 2}), b({1, 4, 2, 2});
    for (size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] = rng.uniform();
        b.data[i] = rng.uniform();
    }
    bank.views = {a, b};
    const Tensor avg = bank.average({1, 4, 2, 2});
    for (size_t i = 0; i < avg.data.size(); ++i)
        REQUIRE(avg.data[i] == Catch::Approx(0.5f * (a.data[i] + b.data[i])).margin(1e-7));

    bank.views.push_back(Tensor({1, 4, 2, 3}));  // mismatched view
    REQUIRE_THROWS_AS(bank.average({1, 4, 2, 2}), ContractError);
}

TEST_CASE("feature bank files round-trip byte-identically") {
    Rng rng(202);
    FeatureBank bank;
    for (int i = 0; i < 3; ++i) {
        Tensor v({1, 5, 3, 3});
        for (auto& x : v.data) x = rng.uniform(-2.f, 2.f);
        bank.views.push_back(std::move(v));
    }
    const std::string p1 = temp_path("mp_bank_a.mpw"), p2 = temp_path("mp_bank_b.mpw");
    bank.save(p1);
    const FeatureBank back = FeatureBank::load(p1);
    REQUIRE(back.count() == 3);
    back.save(p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {});
    const std::string s2((std::istreambuf_iterator<char>(f2)), {});
    REQUIRE(s1 == s2);
    for (int i = 0; i < 3; ++i) REQUIRE(back.views[i].data == bank.views[i].data);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("bank loader rejects files with stray entries") {
    ModelWeights w;
    w.set("bank.view.0", Tensor({1, 2, 2, 2}));
    w.set("other", Tensor({1}));
    const std::string p = temp_path("mp_bank_bad.mpw");
    w.save(p);
    REQUIRE_THROWS_AS(FeatureBank::load(p), FormatError);
    std::remove(p.c_str());
}

TEST_CASE("synthesis output is [1,3,H,W] in (0,1) and depends on the bank") {
    const PresetConfig preset = preset_by_name("toy");
    const ModelWeights w = init_preset_weights(preset, 21);
    Rng rng(203);
    const Tensor warped = random_image(3, 32, rng);
    AppearanceKnowledge knowledge{random_image(3, 32, rng),
                                  Tensor({1, 1, 32, 32}), FeatureBank{}};
    const Tensor out0 = synthesize(warped, knowledge, w, preset.synth);
    REQUIRE(out0.shape == std::vector<int>({1, 3, 32, 32}));
    for (float v : out0.data) {
        REQUIRE(v > 0.f);
        REQUIRE(v < 1.f);
    }
    // a non-zero bank must change the output through the fusion conv
    const int hb = 32 >> (preset.synth.levels() - 1);
    Tensor view({1, preset.synth.bottleneck_ch(), hb, hb});
    for (auto& v : view.data) v = rng.uniform(-1.f, 1.f);
    knowledge.bank.views.push_back(view);
    const Tensor out1 = synthesize(warped, knowledge, w, preset.synth);
    REQUIRE(out0.data != out1.data);
    // wrong bank shape is a contract error
    knowledge.bank.views[0] = Tensor({1, preset.synth.bottleneck_ch(), hb + 1, hb});
    REQUIRE_THROWS_AS(synthesize(warped, knowledge, w, preset.synth), ContractError);
}

TEST_CASE("precompute_bank yields one bottleneck-shaped view per sample") {
    const PresetConfig preset = preset_by_name("toy");
    const ModelWeights w = init_preset_weights(preset, 22);
    const ToyDataset data(32, 7);
    const ToySample s = data.frame(0);
    const KeypointSet s_kps = motion_keypoints(s.image, s.fk, w, preset, KpMode::mixed);
    std::vector<KeypointSet> samples;
    for (int t = 1; t <= 3; ++t) {
        const ToySample d = data.frame(t);
        samples.push_back(motion_keypoints(d.image, d.fk, w, preset, KpMode::mixed));
    }
    const FeatureBank bank = precompute_bank(s.image, s_kps, samples, s.background, s.fg_mask,
                                             s.lm_mask, w, preset.dmn, preset.synth);
    REQUIRE(bank.count() == 3);
    const int hb = 32 >> (preset.synth.levels() - 1);
    for (const auto& v : bank.views)
        REQUIRE(v.shape == std::vector<int>({1, preset.synth.bottleneck_ch(), hb, hb}));
    // different driving poses give different views
    REQUIRE(bank.views[0].data != bank.views[1].data);
}

TEST_CASE("composite_check measures background adherence outside the head") {
    AppearanceKnowledge knowledge{Tensor({1, 3, 4, 4}), Tensor({1, 1, 4, 4}), FeatureBank{}};
    for (auto& v : knowledge.inpainted_bg.data) v = 0.5f;
    knowledge.fg_mask.at(0, 0, 1, 1) = 1.f;  // one foreground pixel
    Tensor out({1, 3, 4, 4});
    for (auto& v : out.data) v = 0.5f;
    // deviate by 0.2 on one background pixel in one channel
    out.at(0, 2, 3, 3) = 0.7f;
    // deviation under the mask must not count
    out.at(0, 0, 1, 1) = 0.9f;
    const CompositeDiagnostics d = composite_check(out, knowledge);
    REQUIRE(d.background_pixels == 15);
    REQUIRE(d.background_adherence == Catch::Approx(0.2f / (15 * 3)).margin(1e-6));
}

TEST_CASE("appearance knowledge validation") {
    AppearanceKnowledge k{Tensor({1, 3, 8, 8}), Tensor({1, 1, 8, 8}), FeatureBank{}};
    REQUIRE_NOTHROW(k.validate());
    k.fg_mask.data[0] = -0.5f;
    REQUIRE_THROWS_AS(k.validate(), ContractError);
    k.fg_mask.data[0] = 0.f;
    k.inpainted_bg.data[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(k.validate(), NumericError);
    AppearanceKnowledge bad{Tensor({1, 3, 8, 8}), Tensor({1, 1, 4, 4}), FeatureBank{}};
    REQUIRE_THROWS_AS(bad.validate(), ContractError);
}
