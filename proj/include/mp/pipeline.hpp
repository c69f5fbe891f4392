#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mp/image_io.hpp"
#include "mp/metrics.hpp"
#include "mp/presets.hpp"
#include "mp/synthesis.hpp"

namespace mp {

// FNV-1a over file bytes; recorded in run manifests for reproducibility audits.
inline std::string file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("hash: cannot open " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!f) break;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

struct FrameJob {
    std::string source_path;   // PPM source portrait
    std::string track_path;    // JSONL keypoint track
    std::string bg_path;       // PPM inpainted background
    std::string fg_mask_path;  // PPM foreground mask (red channel used)
    std::string weights_path;
    std::string bank_path;     // empty => precompute when enabled
    bool precompute_bank_views = false;
    int num_views = 4;
    std::string preset_name = "small";
    std::string out_dir;
    uint64_t seed = 0;

    void validate() const {
        for (const std::string* p :
             {&source_path, &track_path, &bg_path, &fg_mask_path, &weights_path})
            if (!std::filesystem::exists(*p))
                throw FormatError("animate: missing input file " + *p);
        if (!bank_path.empty() && !std::filesystem::exists(bank_path))
            throw FormatError("animate: missing bank file " + bank_path);
        if (bank_path.empty() && !precompute_bank_views)
            throw ContractError("animate: no bank file given and precompute disabled");
    }
};

struct AnimateResult {
    std::vector<std::string> frame_paths;
    std::string manifest_path;
};

namespace pipeline_detail {

inline Tensor mask_from_image(const Tensor& img) {  // red channel as [1,1,H,W]
    Tensor m({1, 1, img.dim(2), img.dim(3)});
    for (int y = 0; y < img.dim(2); ++y)
        for (int x = 0; x < img.dim(3); ++x) m.at(0, 0, y, x) = img.at(0, 0, y, x);
    return m;
}

inline KeypointSet track_mixed(const TrackFrame& fr, const KeypointSet& fallback_nk,
                               const ModelWeights& w) {
    const KeypointSet& nk = fr.neural ? *fr.neural : fallback_nk;
    return merge_keypoints(nk, fr.facial, w);
}

}  // namespace pipeline_detail

// Frame-by-frame generation: for each track frame, merge keypoints, run dense
// motion against the source, warp, synthesize, write frame_NNNN.ppm. Strictly
// sequential; a run manifest with input hashes lands next to the frames.
inline AnimateResult animate(const FrameJob& job) {
    job.validate();
    const PresetConfig preset = preset_by_name(job.preset_name);
    const ModelWeights weights = ModelWeights::load(job.weights_path);
    const Tensor source = read_ppm(job.source_path);
    const Tensor bg = read_ppm(job.bg_path);
    const Tensor fg_mask = pipeline_detail::mask_from_image(read_ppm(job.fg_mask_path));
    check_same_shape(source, bg, "animate: source vs background");
    const KeypointTrack track = load_keypoint_track(job.track_path);

    std::filesystem::create_directories(job.out_dir);
    AnimateResult res;

    const KeypointSet source_nk = nk_detect(source, weights, preset.nk);
    // the first track frame describes the source pose
    KeypointSet source_mixed = track.frames.empty()
                                   ? KeypointSet(source_nk.points, KeypointKind::mixed)
                                   : pipeline_detail::track_mixed(track.frames.front(),
                                                                  source_nk, weights);
    const Tensor lm_mask =
        track.frames.empty()
            ? Tensor({1, 1, source.dim(2), source.dim(3)})
            : rasterize_landmark_mask(track.frames.front().facial, source.dim(2), source.dim(3),
                                      std::max(1, source.dim(2) * 2 / 64));

    FeatureBank bank;
    if (!job.bank_path.empty()) {
        bank = FeatureBank::load(job.bank_path);
    } else if (!track.frames.empty()) {
        std::vector<KeypointSet> samples;
        const int stride =
            std::max<int>(1, static_cast<int>(track.frames.size()) / std::max(1, job.num_views));
        for (size_t i = 0; i < track.frames.size() && static_cast<int>(samples.size()) <
                                                          job.num_views;
             i += static_cast<size_t>(stride))
            samples.push_back(pipeline_detail::track_mixed(track.frames[i], source_nk, weights));
        bank = precompute_bank(source, source_mixed, samples, bg, fg_mask, lm_mask, weights,
                               preset.dmn, preset.synth);
    }
    AppearanceKnowledge knowledge{bg, fg_mask, bank};

    for (size_t i = 0; i < track.frames.size(); ++i) {
        try {
            const KeypointSet d_mixed =
                pipeline_detail::track_mixed(track.frames[i], source_nk, weights);
            const DenseMotionOutput mo = dense_motion(source, source_mixed, d_mixed, fg_mask,
                                                      lm_mask, weights, preset.dmn, false);
            const Tensor warped = warp_and_occlude(source, mo.motion);
            const Tensor out = synthesize(warped, knowledge, weights, preset.synth);
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
            const std::string path = (std::filesystem::path(job.out_dir) / name).string();
            write_ppm(path, out);
            res.frame_paths.push_back(path);
        } catch (const Error& e) {
            throw ContractError("animate: frame " + std::to_string(i) + ": " + e.what());
        }
    }

    // run manifest: configuration plus content hashes of every input and output
    const std::string manifest =
        (std::filesystem::path(job.out_dir) / "run_manifest.json").string();
    std::ofstream m(manifest);
    m << "{\n  \"preset\": \"" << preset.name << "\",\n  \"seed\": " << job.seed
      << ",\n  \"frames\": " << track.frames.size() << ",\n  \"inputs\": {\n";
    const std::vector<std::pair<std::string, std::string>> inputs = {
        {"source", job.source_path},
        {"track", job.track_path},
        {"background", job.bg_path},
        {"fg_mask", job.fg_mask_path},
        {"weights", job.weights_path}};
    for (size_t i = 0; i < inputs.size(); ++i)
        m << "    \"" << inputs[i].first << "\": \"" << file_hash(inputs[i].second) << "\""
          << (i + 1 < inputs.size() ? "," : "") << "\n";
    m << "  },\n  \"outputs\": {\n";
    for (size_t i = 0; i < res.frame_paths.size(); ++i)
        m << "    \"" << std::filesystem::path(res.frame_paths[i]).filename().string()
          << "\": \"" << file_hash(res.frame_paths[i]) << "\""
          << (i + 1 < res.frame_paths.size() ? "," : "") << "\n";
    m << "  }\n}\n";
    res.manifest_path = manifest;
    return res;
}

struct StageTiming {
    std::string stage;
    double median_ms = 0;
    double p95_ms = 0;
};

struct BenchReport {
    std::string preset;
    int resolution = 0;
    int frames = 0;
    std::vector<StageTiming> stages;  // per stage plus "total"
    FlopsReport flops;

    const StageTiming& stage(const std::string& name) const {
        for (const auto& s : stages)
            if (s.stage == name) return s;
        throw ContractError("bench report: no stage named " + name);
    }
};

namespace pipeline_detail {

inline StageTiming order_stats(const std::string& name, std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    StageTiming s{name, 0, 0};
    s.median_ms = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    s.p95_ms = samples[std::min(n - 1, static_cast<size_t>(std::ceil(0.95 * n)) - 1)];
    return s;
}

}  // namespace pipeline_detail

// Host latency benchmark on synthetic inputs: 5 warm-up frames, then `frames`
// timed runs per stage. Absolute numbers are host-specific and only reported.
inline BenchReport bench(const PresetConfig& preset, int resolution, int frames,
                         int threads = 1) {
    require(frames >= 10, "bench: need at least 10 timed frames");
    require(threads == 1, "bench: only the sequential reference mode is implemented");
    BenchReport rep;
    rep.preset = preset.name;
    rep.resolution = resolution;
    rep.frames = frames;
    rep.flops = count_flops(preset, resolution);

    Rng rng(7);
    ModelWeights w = init_preset_weights(preset, 7);
    Tensor source({1, 3, resolution, resolution});
    for (auto& v : source.data) v = rng.uniform();
    Tensor fg({1, 1, resolution, resolution});
    for (auto& v : fg.data) v = rng.uniform() < 0.5f ? 0.f : 1.f;
    Tensor lm({1, 1, resolution, resolution});
    Tensor bg = source;
    std::vector<Point> pts(kNumFacialKeypoints);
    for (auto& p : pts) p = {rng.uniform(-0.9f, 0.9f), rng.uniform(-0.9f, 0.9f)};
    const KeypointSet fk(pts, KeypointKind::facial);

    std::vector<double> t_nk, t_merge, t_motion, t_synth, t_total;
    const FeatureBank empty_bank;
    const AppearanceKnowledge knowledge{bg, fg, empty_bank};
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    for (int f = 0; f < frames + 5; ++f) {
        const auto t0 = clock::now();
        const KeypointSet nk = nk_detect(source, w, preset.nk);
        const auto t1 = clock::now();
        const KeypointSet s_mixed = merge_keypoints(nk, fk, w);
        KeypointSet d_mixed = s_mixed;
        for (auto& p : d_mixed.points) {
            p[0] = clampf(p[0] + 0.01f * static_cast<float>(f % 3), -1.f, 1.f);
            p[1] = clampf(p[1] - 0.01f * static_cast<float>(f % 2), -1.f, 1.f);
        }
        const auto t2 = clock::now();
        const DenseMotionOutput mo =
            dense_motion(source, s_mixed, d_mixed, fg, lm, w, preset.dmn, false);
        const Tensor warped = warp_and_occlude(source, mo.motion);
        const auto t3 = clock::now();
        const Tensor out = synthesize(warped, knowledge, w, preset.synth);
        const auto t4 = clock::now();
        if (f < 5) continue;  // warm-up
        t_nk.push_back(ms(t0, t1));
        t_merge.push_back(ms(t1, t2));
        t_motion.push_back(ms(t2, t3));
        t_synth.push_back(ms(t3, t4));
        t_total.push_back(ms(t0, t4));
        (void)out;
    }
    rep.stages.push_back(pipeline_detail::order_stats("nk_detect", t_nk));
    rep.stages.push_back(pipeline_detail::order_stats("merger", t_merge));
    rep.stages.push_back(pipeline_detail::order_stats("dense_motion", t_motion));
    rep.stages.push_back(pipeline_detail::order_stats("synthesis", t_synth));
    rep.stages.push_back(pipeline_detail::order_stats("total", t_total));
    return rep;
}

}  // namespace mp
