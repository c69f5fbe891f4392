// Command-line surface for the portrait animation engine.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "mp/mp.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"one-shot portrait animation engine"};
    app.require_subcommand(1);

    // animate
    auto* animate = app.add_subcommand("animate", "generate frames from a keypoint track");
    mp::FrameJob job;
    animate->add_option("--source", job.source_path, "source portrait (PPM)")->required();
    animate->add_option("--track", job.track_path, "keypoint track (JSONL)")->required();
    animate->add_option("--bg", job.bg_path, "inpainted background (PPM)")->required();
    animate->add_option("--fg-mask", job.fg_mask_path, "foreground mask (PPM)")->required();
    animate->add_option("--weights", job.weights_path, "model weights (MPW1)")->required();
    animate->add_option("--bank", job.bank_path, "precomputed feature bank (MPW1)");
    animate->add_flag("--precompute", job.precompute_bank_views,
                      "build the bank from the track when --bank is absent");
    animate->add_option("--views", job.num_views, "bank views when precomputing");
    animate->add_option("--preset", job.preset_name, "large|medium|small|toy");
    animate->add_option("--seed", job.seed, "rng seed recorded in the manifest");
    animate->add_option("--out", job.out_dir, "output directory")->required();
    int threads = 1;
    animate->add_option("--threads", threads, "1 = sequential reference mode");

    // precompute-bank
    auto* pb = app.add_subcommand("precompute-bank", "build a pseudo multiview feature bank");
    mp::FrameJob bank_job;
    std::string bank_out;
    pb->add_option("--source", bank_job.source_path)->required();
    pb->add_option("--track", bank_job.track_path)->required();
    pb->add_option("--bg", bank_job.bg_path)->required();
    pb->add_option("--fg-mask", bank_job.fg_mask_path)->required();
    pb->add_option("--weights", bank_job.weights_path)->required();
    pb->add_option("--views", bank_job.num_views);
    pb->add_option("--preset", bank_job.preset_name);
    pb->add_option("--out", bank_out, "bank file to write")->required();

    // train-toy
    auto* tt = app.add_subcommand("train-toy", "train on the synthetic procedural dataset");
    mp::ToyTrainOptions topt;
    std::string kp_mode = "mixed", train_log, train_out;
    tt->add_option("--steps", topt.steps);
    tt->add_option("--resolution", topt.resolution);
    tt->add_option("--seed", topt.train.seed);
    tt->add_option("--lr", topt.train.learning_rate);
    tt->add_option("--optimizer", topt.train.optimizer, "adam|sgd-momentum");
    tt->add_option("--kp-mode", kp_mode, "mixed|nk_only|fk_only");
    tt->add_option("--views", topt.train.num_views, "training bank size (0 disables)");
    tt->add_option("--frames", topt.num_frames);
    tt->add_option("--log", train_log, "JSONL loss log path");
    tt->add_option("--out", train_out, "trained weights path (MPW1)");

    // bench
    auto* bn = app.add_subcommand("bench", "host latency benchmark");
    std::string bench_preset = "small";
    int bench_res = 256, bench_frames = 10, bench_threads = 1;
    bn->add_option("--preset", bench_preset);
    bn->add_option("--resolution", bench_res);
    bn->add_option("--frames", bench_frames);
    bn->add_option("--threads", bench_threads);

    // flops
    auto* fl = app.add_subcommand("flops", "analytic per-stage FLOPs report");
    std::string flops_preset = "large";
    int flops_res = 512, flops_views = 4;
    fl->add_option("--preset", flops_preset);
    fl->add_option("--resolution", flops_res);
    fl->add_option("--views", flops_views);

    // weights inspect
    auto* wsub = app.add_subcommand("weights", "weight file utilities");
    wsub->require_subcommand(1);
    auto* wi = wsub->add_subcommand("inspect", "list entries of an MPW1 file");
    std::string weights_path;
    wi->add_option("--weights", weights_path)->required();

    // metrics psnr|ssim
    auto* msub = app.add_subcommand("metrics", "image comparison metrics");
    msub->require_subcommand(1);
    std::string img_a, img_b;
    auto* mp_psnr = msub->add_subcommand("psnr", "peak signal-to-noise ratio (dB)");
    mp_psnr->add_option("--a", img_a)->required();
    mp_psnr->add_option("--b", img_b)->required();
    auto* mp_ssim = msub->add_subcommand("ssim", "structural similarity");
    mp_ssim->add_option("--a", img_a)->required();
    mp_ssim->add_option("--b", img_b)->required();

    CLI11_PARSE(app, argc, argv);

    if (*animate) {
        if (threads != 1) throw mp::ContractError("only --threads 1 is implemented");
        const auto res = mp::animate(job);
        std::cout << res.frame_paths.size() << " frames -> " << job.out_dir << "\n"
                  << "manifest: " << res.manifest_path << "\n";
    } else if (*pb) {
        bank_job.precompute_bank_views = true;
        const mp::PresetConfig preset = mp::preset_by_name(bank_job.preset_name);
        const mp::ModelWeights w = mp::ModelWeights::load(bank_job.weights_path);
        const mp::Tensor source = mp::read_ppm(bank_job.source_path);
        const mp::Tensor bg = mp::read_ppm(bank_job.bg_path);
        const mp::Tensor fg(mp::read_ppm(bank_job.fg_mask_path));
        mp::Tensor fg_mask({1, 1, fg.dim(2), fg.dim(3)});
        for (int y = 0; y < fg.dim(2); ++y)
            for (int x = 0; x < fg.dim(3); ++x) fg_mask.at(0, 0, y, x) = fg.at(0, 0, y, x);
        const mp::KeypointTrack track = mp::load_keypoint_track(bank_job.track_path);
        if (track.frames.empty()) throw mp::ContractError("precompute-bank: empty track");
        const mp::KeypointSet nk = mp::nk_detect(source, w, preset.nk);
        const mp::KeypointSet s_mixed =
            mp::merge_keypoints(track.frames[0].neural ? *track.frames[0].neural : nk,
                                track.frames[0].facial, w);
        const mp::Tensor lm = mp::rasterize_landmark_mask(
            track.frames[0].facial, source.dim(2), source.dim(3),
            std::max(1, source.dim(2) * 2 / 64));
        std::vector<mp::KeypointSet> samples;
        const int stride = std::max<int>(
            1, static_cast<int>(track.frames.size()) / std::max(1, bank_job.num_views));
        for (size_t i = 0; i < track.frames.size() &&
                           static_cast<int>(samples.size()) < bank_job.num_views;
             i += static_cast<size_t>(stride))
            samples.push_back(mp::merge_keypoints(
                track.frames[i].neural ? *track.frames[i].neural : nk,
                track.frames[i].facial, w));
        const mp::FeatureBank bank = mp::precompute_bank(source, s_mixed, samples, bg, fg_mask,
                                                         lm, w, preset.dmn, preset.synth);
        bank.save(bank_out);
        std::cout << "bank with " << bank.count() << " views -> " << bank_out << "\n";
    } else if (*tt) {
        topt.train.kp_mode = mp::kp_mode_by_name(kp_mode);
        std::ofstream log_file;
        std::ostream* log = nullptr;
        if (!train_log.empty()) {
            log_file.open(train_log);
            if (!log_file) throw mp::FormatError("train-toy: cannot open log " + train_log);
            log = &log_file;
        }
        const mp::ToyTrainResult res = mp::train_toy(topt, log);
        if (!train_out.empty()) res.weights.save(train_out);
        std::cout << "loss " << res.initial_loss << " -> " << res.final_loss
                  << " over " << topt.steps << " steps\n"
                  << "psnr " << res.final_psnr << " dB (identity baseline "
                  << res.baseline_psnr << " dB)\n";
    } else if (*bn) {
        const auto rep =
            mp::bench(mp::preset_by_name(bench_preset), bench_res, bench_frames, bench_threads);
        std::cout << "preset " << rep.preset << " @ " << rep.resolution << ", "
                  << rep.frames << " timed frames\n";
        for (const auto& s : rep.stages)
            std::cout << "  " << s.stage << ": median " << s.median_ms << " ms, p95 "
                      << s.p95_ms << " ms\n";
        std::cout << "  analytic: " << rep.flops.total_flops() / 1e9 << " GFLOPs/frame\n";
    } else if (*fl) {
        const auto rep =
            mp::count_flops(mp::preset_by_name(flops_preset), flops_res, flops_views);
        for (const auto& s : rep.stages)
            std::cout << s.stage << ": " << s.flops / 1e9 << " GFLOPs, "
                      << s.params / 1e6 << " M params\n";
        std::cout << "total: " << rep.total_flops() / 1e9 << " GFLOPs, "
                  << rep.total_params() / 1e6 << " M params\n";
    } else if (*wi) {
        const mp::ModelWeights w = mp::ModelWeights::load(weights_path);
        for (const auto& [name, tensor] : w.entries)
            std::cout << name << " " << tensor.shape_str() << "\n";
        std::cout << w.entries.size() << " entries, " << w.parameter_count()
                  << " parameters\n";
    } else if (*mp_psnr || *mp_ssim) {
        const mp::Tensor a = mp::read_ppm(img_a), b = mp::read_ppm(img_b);
        std::cout << (*mp_psnr ? mp::psnr(a, b) : mp::ssim(a, b)) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
