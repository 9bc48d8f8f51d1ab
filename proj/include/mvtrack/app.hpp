#pragma once

// Command implementations behind the mvtrack executable. Each command returns
// a process exit code: 0 complete, 2 tracking interrupted, 1 usage or I/O
// error (thrown as an exception and mapped by the caller).

#include "mvtrack/config.hpp"
#include "mvtrack/evaluation.hpp"
#include "mvtrack/io.hpp"
#include "mvtrack/synth_world.hpp"
#include "mvtrack/tracker.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mvtrack {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kExitComplete = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInterrupted = 2;

namespace fs = std::filesystem;

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

/// Level from MVTRACK_LOG (quiet, info, debug); info when unset.
inline LogLevel log_level_from_env() {
    const char* v = std::getenv("MVTRACK_LOG");
    if (!v) return LogLevel::kInfo;
    const std::string s(v);
    if (s == "quiet" || s == "0") return LogLevel::kQuiet;
    if (s == "debug" || s == "2") return LogLevel::kDebug;
    return LogLevel::kInfo;
}

class Logger {
public:
    Logger(std::ostream& os, LogLevel level) : os_(&os), level_(level) {}
    void info(const std::string& msg) const {
        if (level_ >= LogLevel::kInfo) *os_ << msg << '\n';
    }
    void debug(const std::string& msg) const {
        if (level_ >= LogLevel::kDebug) *os_ << msg << '\n';
    }
    LogLevel level() const { return level_; }

private:
    std::ostream* os_;
    LogLevel level_;
};

/// Command-line overrides shared by the commands.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<TrackMode> mode;
    std::optional<int> rpe_delta;
    std::optional<bool> align;
};

inline constexpr const char* kSceneFile = "scene.xmpc";
inline constexpr const char* kGtFile = "gt_poses.txt";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTrajectoryFile = "trajectory.txt";
inline constexpr const char* kDiagnosticsFile = "diagnostics.csv";
inline constexpr const char* kEnergyTraceFile = "energy_trace.csv";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kPlotFile = "plot.csv";
inline constexpr const char* kAblationFile = "ablation.csv";

namespace detail {

inline RunConfig resolve_config(const std::string& path, const Overrides& o) {
    RunConfig c = path.empty() ? RunConfig{} : load_config(path);
    if (path.empty()) c.derive_seeds();
    if (o.seed) {
        c.seed = *o.seed;
        c.derive_seeds();
    }
    if (o.mode) c.tracker.mode = *o.mode;
    if (o.rpe_delta) c.eval.rpe_delta = *o.rpe_delta;
    if (o.align) c.eval.align = *o.align;
    c.validate();
    return c;
}

inline json manifest(const char* command, const RunConfig& c, const json& artifacts, const json& timing) {
    return {{"tool", "mvtrack"},
            {"version", kVersion},
            {"command", command},
            {"seeds",
             {{"seed", c.seed},
              {"scene", c.scene.seed},
              {"trajectory", c.trajectory.seed},
              {"vo", c.vo.seed},
              {"tracker", c.tracker.seed},
              {"init", c.init_seed()}}},
            {"config", config_to_json(c)},
            {"artifacts", artifacts},
            {"timing_ms", timing}};
}

inline void write_json(const fs::path& p, const json& j) { write_file(p.string(), j.dump(2) + "\n"); }

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline Trajectory prefix(const Trajectory& t, std::size_t n) {
    Trajectory out;
    out.poses.assign(t.poses.begin(), t.poses.begin() + static_cast<std::ptrdiff_t>(std::min(n, t.size())));
    return out;
}

inline PoseSE3 initial_pose(const RunConfig& c, const Trajectory& gt) {
    return perturb_pose(gt.cam_pose(0), c.init_perturbation, c.init_seed());
}

}  // namespace detail

/// Writes the scene cloud, the ground-truth trajectory and a manifest.
inline int cmd_synth(const std::string& config_path, const std::string& out_dir, const Overrides& o,
                     const Logger& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = detail::resolve_config(config_path, o);
    const Scenario sc = build_scenario(c.scene, c.trajectory, c.vo, c.tracker.camera, c.tracker.crop);
    const double ms_build = detail::ms_since(t0);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    save_cloud(sc.map.cloud(), (out / kSceneFile).string());
    save_trajectory(sc.gt, (out / kGtFile).string());
    detail::write_json(out / kManifestFile,
                       detail::manifest("synth", c, {{"scene", kSceneFile}, {"gt_poses", kGtFile}},
                                        {{"build", ms_build}, {"total", detail::ms_since(t0)}}));
    log.info("synth: " + std::to_string(sc.map.size()) + " points, " + std::to_string(sc.gt.size()) + " poses -> " +
             out_dir);
    return kExitComplete;
}

/// Tracks the scenario in `scenario_dir`. When `config_path` is empty the
/// scenario's manifest supplies the configuration.
inline int cmd_track(const std::string& config_path, const std::string& scenario_dir, const std::string& out_dir,
                     const Overrides& o, const Logger& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path sdir(scenario_dir);
    for (const char* f : {kSceneFile, kGtFile}) {
        if (!fs::is_regular_file(sdir / f)) throw std::runtime_error("missing scenario file " + (sdir / f).string());
    }
    const std::string cfg_path = config_path.empty() ? (sdir / kManifestFile).string() : config_path;
    if (!fs::is_regular_file(cfg_path)) throw std::runtime_error("missing config " + cfg_path);
    const RunConfig c = detail::resolve_config(cfg_path, o);

    Scenario sc;
    sc.map = GlobalMap(load_cloud((sdir / kSceneFile).string()), default_index_cell(c.tracker.crop));
    sc.gt = load_trajectory((sdir / kGtFile).string());
    if (sc.gt.empty()) throw std::runtime_error("scenario has no ground-truth poses");
    sc.vo = vo_oracle(sc.gt, c.vo);
    const double ms_load = detail::ms_since(t0);

    const auto t1 = std::chrono::steady_clock::now();
    const RunResult r = run(c.tracker, sc, detail::initial_pose(c, sc.gt));
    const double ms_track = detail::ms_since(t1);

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    save_trajectory(r.trajectory, (out / kTrajectoryFile).string());
    detail::write_file((out / kDiagnosticsFile).string(), diagnostics_csv(r.diagnostics));
    json artifacts = {{"trajectory", kTrajectoryFile}, {"diagnostics", kDiagnosticsFile}};
    if (c.write_energy_trace) {
        detail::write_file((out / kEnergyTraceFile).string(), energy_trace_csv(r.diagnostics));
        artifacts["energy_trace"] = kEnergyTraceFile;
    }
    const Trajectory gt = detail::prefix(sc.gt, r.trajectory.size());
    const MetricsReport m = evaluate(r.trajectory, gt, c.eval, r.complete);
    emit_report(m, (out / kMetricsFile).string());
    save_plot_csv(r.trajectory, gt, (out / kPlotFile).string());
    artifacts["metrics"] = kMetricsFile;
    artifacts["plot"] = kPlotFile;
    json manifest = detail::manifest("track", c, artifacts, {{"load", ms_load}, {"track", ms_track}});
    manifest["scenario"] = fs::absolute(sdir).lexically_normal().string();
    manifest["complete"] = r.complete;
    manifest["frames_tracked"] = r.trajectory.size();
    if (!r.complete) manifest["failed_frame"] = r.failed_frame;
    detail::write_json(out / kManifestFile, manifest);

    log.info(std::string("track [") + to_string(c.tracker.mode) + "]: " + std::to_string(r.trajectory.size()) + "/" +
             std::to_string(sc.gt.size()) + " frames, " + (r.complete ? "complete" : "interrupted"));
    log.debug(format_report(m));
    return r.complete ? kExitComplete : kExitInterrupted;
}

struct EvalArgs {
    std::string est_path;
    std::string gt_path;
    std::string out_dir;  // optional
    bool allow_partial = false;
};

/// Prints the metrics table and optionally writes metrics and plot CSVs. An
/// estimate shorter than the ground truth is accepted with allow_partial and
/// reported as incomplete.
inline int cmd_eval(const EvalArgs& a, const Overrides& o, std::ostream& out, const Logger& log) {
    EvalOptions opts;
    if (o.rpe_delta) opts.rpe_delta = *o.rpe_delta;
    if (o.align) opts.align = *o.align;
    if (opts.rpe_delta < 1) throw std::invalid_argument("--rpe-delta must be >= 1");
    const Trajectory est = load_trajectory(a.est_path);
    Trajectory gt = load_trajectory(a.gt_path);
    bool complete = true;
    if (est.size() != gt.size()) {
        if (!a.allow_partial || est.size() > gt.size()) throw LengthMismatch("eval", est.size(), gt.size());
        gt = detail::prefix(gt, est.size());
        complete = false;
    }
    const MetricsReport m = evaluate(est, gt, opts, complete);
    if (log.level() >= LogLevel::kInfo) out << format_report(m);
    if (!a.out_dir.empty()) {
        fs::create_directories(a.out_dir);
        emit_report(m, (fs::path(a.out_dir) / kMetricsFile).string());
        save_plot_csv(est, gt, (fs::path(a.out_dir) / kPlotFile).string());
    }
    return kExitComplete;
}

/// Runs every configured mode on one scenario with identical seeds and
/// writes one comparison row per mode.
inline int cmd_ablate(const std::string& config_path, const std::string& out_dir, const Overrides& o,
                      const Logger& log) {
    RunConfig c = detail::resolve_config(config_path, o);
    if (o.mode) c.ablate_modes = {*o.mode};
    const Scenario sc = build_scenario(c.scene, c.trajectory, c.vo, c.tracker.camera, c.tracker.crop);
    const PoseSE3 init = detail::initial_pose(c, sc.gt);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    std::string csv = "mode,frames,complete,ate_m,transl_mean_cm,transl_std_cm,rot_mean_deg,rot_std_deg,fail_pct,ms_per_frame\n";
    json artifacts = {{"ablation", kAblationFile}};
    json timing = json::object();
    for (const TrackMode mode : c.ablate_modes) {
        TrackerConfig tc = c.tracker;
        tc.mode = mode;
        const auto t0 = std::chrono::steady_clock::now();
        const RunResult r = run(tc, sc, init);
        const double ms = detail::ms_since(t0);
        const MetricsReport m = evaluate(r.trajectory, detail::prefix(sc.gt, r.trajectory.size()), c.eval, r.complete);
        const std::string traj = std::string(to_string(mode)) + "_trajectory.txt";
        save_trajectory(r.trajectory, (out / traj).string());
        artifacts[std::string(to_string(mode)) + "_trajectory"] = traj;
        timing[to_string(mode)] = ms;
        char buf[512];
        std::snprintf(buf, sizeof buf, "%s,%zu,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g,%.3f\n", to_string(mode), m.frames,
                      m.complete ? 1 : 0, m.ate_rmse, 100.0 * m.transl_err.mean, 100.0 * m.transl_err.std,
                      m.rot_err.mean, m.rot_err.std, 100.0 * m.failure_rate,
                      r.trajectory.empty() ? 0.0 : ms / static_cast<double>(r.diagnostics.size()));
        csv += buf;
        log.info(std::string("ablate [") + to_string(mode) + "]: " + (m.complete ? "complete" : "interrupted") +
                 ", mean transl error " + std::to_string(100.0 * m.transl_err.mean) + " cm");
    }
    detail::write_file((out / kAblationFile).string(), csv);
    detail::write_json(out / kManifestFile, detail::manifest("ablate", c, artifacts, timing));
    return kExitComplete;
}

}  // namespace mvtrack
