// mvtrack: synthetic scenarios, tracking runs, ablations and evaluation.

#include "mvtrack/app.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace mvtrack;
    CLI::App app{"Camera tracking in a point-cloud map from depth and optical flows"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    std::string config, out, scenario, mode;
    std::uint64_t seed = 0;
    int rpe_delta = 1;
    bool align = false;
    EvalArgs eval_args;

    const auto add_seed = [&](CLI::App* c) { return c->add_option("--seed", seed, "Top-level seed; every other seed derives from it"); };
    const auto add_mode = [&](CLI::App* c) {
        return c->add_option("--mode", mode, "Tracking mode")
            ->check(CLI::IsMember({"frame_by_frame", "loose_coupled", "multi_view"}));
    };

    auto* synth = app.add_subcommand("synth", "Generate a scene, a ground-truth trajectory and a manifest");
    synth->add_option("--config", config, "JSON config or run manifest")->check(CLI::ExistingFile);
    synth->add_option("--out", out, "Output directory")->required();
    auto* synth_seed = add_seed(synth);

    auto* track = app.add_subcommand("track", "Track a generated scenario");
    track->add_option("--config", config, "JSON config or run manifest (default: the scenario manifest)");
    track->add_option("--scenario", scenario, "Scenario directory written by synth")->required();
    track->add_option("--out", out, "Output directory")->required();
    auto* track_mode = add_mode(track);
    auto* track_seed = add_seed(track);

    auto* eval = app.add_subcommand("eval", "Compare an estimated trajectory with ground truth");
    eval->add_option("--est", eval_args.est_path, "Estimated poses (KITTI format)")->required()->check(CLI::ExistingFile);
    eval->add_option("--gt", eval_args.gt_path, "Ground-truth poses (KITTI format)")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", eval_args.out_dir, "Directory for metrics.csv and plot.csv");
    auto* eval_delta = eval->add_option("--rpe-delta", rpe_delta, "Frame offset for the relative pose error")
                           ->check(CLI::PositiveNumber);
    eval->add_flag("--align", align, "Rigidly align the estimate before computing ATE");
    eval->add_flag("--allow-partial", eval_args.allow_partial, "Accept an estimate shorter than the ground truth");

    auto* ablate = app.add_subcommand("ablate", "Run the tracking modes on one scenario with paired seeds");
    ablate->add_option("--config", config, "JSON config or run manifest")->check(CLI::ExistingFile);
    ablate->add_option("--out", out, "Output directory")->required();
    auto* ablate_mode = add_mode(ablate);
    auto* ablate_seed = add_seed(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Help and version exit 0; every other parse problem is a usage error.
        return app.exit(e) == 0 ? kExitComplete : kExitUsage;
    }

    Overrides o;
    if (synth_seed->count() || track_seed->count() || ablate_seed->count()) o.seed = seed;
    if (track_mode->count() || ablate_mode->count()) o.mode = parse_mode(mode);
    if (eval_delta->count()) o.rpe_delta = rpe_delta;
    if (align) o.align = true;
    const Logger log(std::cerr, quiet ? LogLevel::kQuiet : log_level_from_env());

    try {
        if (*synth) return cmd_synth(config, out, o, log);
        if (*track) return cmd_track(config, scenario, out, o, log);
        if (*eval) return cmd_eval(eval_args, o, std::cout, log);
        if (*ablate) return cmd_ablate(config, out, o, log);
    } catch (const std::exception& e) {
        std::cerr << "mvtrack: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
