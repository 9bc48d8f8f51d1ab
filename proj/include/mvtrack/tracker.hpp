#pragma once

// Online tracking loop: crop, render, flow, PnP and pair optimization per
// step, plus the frame-by-frame and loosely coupled baselines.

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/depth_render.hpp"
#include "mvtrack/evaluation.hpp"
#include "mvtrack/flow.hpp"
#include "mvtrack/joint_optimizer.hpp"
#include "mvtrack/map_manager.hpp"
#include "mvtrack/pnp.hpp"
#include "mvtrack/synth_world.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvtrack {

enum class TrackMode { kFrameByFrame, kLooseCoupled, kMultiView };

inline const char* to_string(TrackMode m) {
    switch (m) {
        case TrackMode::kFrameByFrame: return "frame_by_frame";
        case TrackMode::kLooseCoupled: return "loose_coupled";
        case TrackMode::kMultiView: return "multi_view";
    }
    return "?";
}

inline TrackMode parse_mode(const std::string& s) {
    if (s == "frame_by_frame") return TrackMode::kFrameByFrame;
    if (s == "loose_coupled") return TrackMode::kLooseCoupled;
    if (s == "multi_view") return TrackMode::kMultiView;
    throw std::invalid_argument("unknown mode '" + s + "' (expected frame_by_frame, loose_coupled or multi_view)");
}

enum class FlowBranch { kC2D, kN2D, kC2N, kAll };

inline const char* to_string(FlowBranch b) {
    switch (b) {
        case FlowBranch::kC2D: return "c2d";
        case FlowBranch::kN2D: return "n2d";
        case FlowBranch::kC2N: return "c2n";
        case FlowBranch::kAll: return "all";
    }
    return "?";
}

inline FlowBranch parse_branch(const std::string& s) {
    if (s == "c2d") return FlowBranch::kC2D;
    if (s == "n2d") return FlowBranch::kN2D;
    if (s == "c2n") return FlowBranch::kC2N;
    if (s == "all") return FlowBranch::kAll;
    throw std::invalid_argument("unknown flow branch '" + s + "' (expected c2d, n2d, c2n or all)");
}

/// Replaces the noise model of one flow branch for the steps whose current
/// frame lies in [first_frame, first_frame + frame_count).
struct NoiseEpisode {
    int first_frame = 0;
    int frame_count = 1;
    FlowBranch branch = FlowBranch::kC2D;
    FlowNoiseModel noise;

    bool covers(int frame) const { return frame >= first_frame && frame < first_frame + frame_count; }
};

struct TrackerConfig {
    TrackMode mode = TrackMode::kMultiView;
    CropExtents crop;
    CameraIntrinsics camera;
    OcclusionOptions occlusion;
    FlowNoiseModel noise;  // base model for every branch
    std::vector<NoiseEpisode> episodes;
    RansacConfig ransac;
    EnergyConfig energy;
    double loose_reproj_threshold = 1.5;  // px
    double failure_threshold = 4.0;       // m, offline evaluation only
    std::size_t max_correspondences = 2000;
    std::size_t max_consistency_points = 2000;
    std::uint64_t seed = 1;

    void validate() const {
        crop.validate();
        camera.validate();
        noise.validate();
        ransac.validate();
        energy.validate();
        for (const auto& e : episodes) {
            e.noise.validate();
            if (e.first_frame < 0 || e.frame_count < 0) throw std::invalid_argument("noise episode frames must be non-negative");
        }
        if (!(loose_reproj_threshold >= 0.0)) throw std::invalid_argument("loose_reproj_threshold must be non-negative");
        if (!(failure_threshold > 0.0)) throw std::invalid_argument("failure_threshold must be positive");
        if (max_correspondences < 4) throw std::invalid_argument("max_correspondences must be >= 4");
    }
};

/// Everything a flow estimator sees for one step. Ground-truth poses are
/// only meant for synthetic providers.
struct FlowRequest {
    const DepthMap* depth = nullptr;
    const PointCloud* cloud = nullptr;
    PoseSE3 t_init;
    PoseSE3 gt_cur;
    PoseSE3 gt_next;
    BranchNoise noise;
    bool need_pair = true;  // false: only f_c2d is used
};

class FlowProvider {
public:
    virtual ~FlowProvider() = default;
    virtual FlowTriplet estimate(const FlowRequest& req) const = 0;
};

/// Ground-truth-derived flows with configurable noise.
class OracleFlowProvider final : public FlowProvider {
public:
    FlowTriplet estimate(const FlowRequest& req) const override {
        if (req.need_pair) return oracle_flows(*req.depth, *req.cloud, req.t_init, req.gt_cur, req.gt_next, req.noise);
        FlowTriplet t;
        t.f_c2d = depth_flow(*req.depth, *req.cloud, req.t_init, req.gt_cur);
        detail::mask_out_of_image(t.f_c2d, req.depth->camera);
        apply_noise(t.f_c2d, req.noise.c2d, detail::kStreamC2D);
        return t;
    }
};

struct TrackerState {
    PoseSE3 t_init_next;       // cam_from_world used to crop and render the next step
    int frame_index = 0;
    std::vector<PoseSE3> history;  // cam_from_world, one per processed frame
    bool failed = false;
};

inline TrackerState init(const PoseSE3& t0) { return {t0, 0, {}, false}; }

struct FrameDiagnostics {
    int frame = 0;
    double rot_err_deg = 0.0;
    double transl_err_cm = 0.0;
    std::size_t inliers_cur = 0;
    std::size_t inliers_next = 0;
    double e_initial = 0.0;
    double e_final = 0.0;
    double ms_crop = 0.0;
    double ms_render = 0.0;
    double ms_flow = 0.0;
    double ms_pnp = 0.0;
    double ms_optimize = 0.0;
    bool used_vo = false;
    std::vector<LmIteration> trace;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

class StageClock {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
        return ms;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct PnpOutcome {
    PnpResult result;
    std::vector<Correspondence> inliers;
};

/// PnP on the (capped) correspondences of one flow; a failed or degenerate
/// solve yields success = false instead of an exception.
inline PnpOutcome locate(const DepthMap& d, const FlowField& f, const PointCloud& cloud, const PoseSE3& t_init,
                         const TrackerConfig& cfg, std::uint64_t seed) {
    PnpOutcome out;
    out.result.pose = t_init;
    if (f.width != d.width || f.height != d.height) return out;
    auto corrs = stride_subsample(correspondences_from_flow(d, f, cloud), cfg.max_correspondences);
    RansacConfig rc = cfg.ransac;
    rc.seed = seed;
    try {
        out.result = solve_pnp_ransac(corrs, cfg.camera, t_init, rc);
    } catch (const std::invalid_argument&) {
        return out;
    }
    if (out.result.success) {
        for (std::size_t i = 0; i < corrs.size(); ++i) {
            if (out.result.inliers[i]) out.inliers.push_back(corrs[i]);
        }
    }
    return out;
}

}  // namespace detail

/// Noise models for the three branches at a given step.
inline BranchNoise branch_noise(const TrackerConfig& cfg, int frame) {
    BranchNoise n{cfg.noise, cfg.noise, cfg.noise};
    for (const auto& e : cfg.episodes) {
        if (!e.covers(frame)) continue;
        if (e.branch == FlowBranch::kC2D || e.branch == FlowBranch::kAll) n.c2d = e.noise;
        if (e.branch == FlowBranch::kN2D || e.branch == FlowBranch::kAll) n.n2d = e.noise;
        if (e.branch == FlowBranch::kC2N || e.branch == FlowBranch::kAll) n.c2n = e.noise;
    }
    const auto fs = static_cast<std::uint64_t>(frame);
    n.c2d.seed = detail::mix_seed(cfg.seed ^ n.c2d.seed, fs, 1);
    n.n2d.seed = detail::mix_seed(cfg.seed ^ n.n2d.seed, fs, 2);
    n.c2n.seed = detail::mix_seed(cfg.seed ^ n.c2n.seed, fs, 3);
    return n;
}

class Tracker {
public:
    Tracker(const TrackerConfig& cfg, const GlobalMap& map, std::shared_ptr<const FlowProvider> provider = nullptr)
        : cfg_(cfg), map_(&map), provider_(provider ? std::move(provider) : std::make_shared<OracleFlowProvider>()) {
        cfg_.validate();
    }

    const TrackerConfig& config() const { return cfg_; }

    /// One multi-view step on the pair (frame, frame + 1). Returns the
    /// optimized (T_cur*, T_next*) or nothing on failure.
    std::optional<std::pair<PoseSE3, PoseSE3>> step_multi_view(TrackerState& s, const PoseSE3& gt_cur,
                                                               const PoseSE3& gt_next, FrameDiagnostics* diag = nullptr) {
        FrameDiagnostics dg;
        dg.frame = s.frame_index;
        detail::StageClock clock;
        const PoseSE3 t_init = s.t_init_next;
        const PointCloud crop = map_->crop(t_init, cfg_.crop);
        dg.ms_crop = clock.lap();
        const DepthMap depth = remove_occlusions(render_depth(crop, cfg_.camera, t_init), cfg_.occlusion);
        dg.ms_render = clock.lap();
        const FlowTriplet flows = provider_->estimate(
            {&depth, &crop, t_init, gt_cur, gt_next, branch_noise(cfg_, s.frame_index), true});
        dg.ms_flow = clock.lap();
        const auto fs = static_cast<std::uint64_t>(s.frame_index);
        const auto cur = detail::locate(depth, flows.f_c2d, crop, t_init, cfg_, detail::mix_seed(cfg_.seed, fs, 11));
        const auto next = detail::locate(depth, flows.f_n2d, crop, t_init, cfg_, detail::mix_seed(cfg_.seed, fs, 12));
        dg.ms_pnp = clock.lap();
        dg.inliers_cur = cur.result.success ? cur.result.inlier_count : 0;
        dg.inliers_next = next.result.success ? next.result.inlier_count : 0;

        std::optional<std::pair<PoseSE3, PoseSE3>> out;
        if (!cur.result.success && !next.result.success) {
            s.failed = true;
        } else {
            // Both poses start from the surviving estimates; a failed frame
            // starts from the pose its partner would give it.
            const PoseSE3 t_cur0 = cur.result.success ? cur.result.pose : t_init;
            const PoseSE3 t_next0 = next.result.success ? next.result.pose : t_cur0;
            const auto& seed_set = cur.result.success ? cur.inliers : next.inliers;
            std::vector<Vec3> pts;
            pts.reserve(seed_set.size());
            for (const auto& c : seed_set) pts.push_back(c.p_world);
            pts = stride_subsample(std::move(pts), cfg_.max_consistency_points);
            const auto cps = sample_consistency_points(pts, cfg_.camera, t_cur0, flows.f_c2n);
            const JointResult jr =
                optimize_pair(t_cur0, t_next0, cur.inliers, next.inliers, cps, cfg_.camera, cfg_.energy);
            dg.e_initial = jr.initial_energy;
            dg.e_final = jr.final_energy;
            dg.trace = jr.trace;
            if (jr.degenerate && (!cur.result.success || !next.result.success)) {
                s.failed = true;
            } else {
                out.emplace(jr.t_cur_star, jr.t_next_star);
                s.history.push_back(jr.t_cur_star);
                s.t_init_next = jr.t_next_star;
                ++s.frame_index;
            }
        }
        dg.ms_optimize = clock.lap();
        fill_error(dg, out ? std::optional<PoseSE3>(out->first) : std::nullopt, gt_cur);
        if (diag) *diag = std::move(dg);
        return out;
    }

    std::optional<PoseSE3> step_frame_by_frame(TrackerState& s, const PoseSE3& gt_cur, FrameDiagnostics* diag = nullptr) {
        FrameDiagnostics dg;
        const auto r = single_frame(s, gt_cur, dg);
        std::optional<PoseSE3> out;
        if (r.success) {
            out = r.pose;
            s.history.push_back(r.pose);
            s.t_init_next = r.pose;
            ++s.frame_index;
        } else {
            s.failed = true;
        }
        fill_error(dg, out, gt_cur);
        if (diag) *diag = std::move(dg);
        return out;
    }

    /// Candidate A is the single-frame PnP pose; candidate B is the previous
    /// estimate moved by the VO relative motion (world_from_cam convention).
    /// A is kept when its inlier RMSE is below the threshold.
    PoseSE3 step_loose_coupled(TrackerState& s, const PoseSE3& gt_cur, const std::optional<PoseSE3>& vo_relative,
                               FrameDiagnostics* diag = nullptr) {
        const PoseSE3 cand_b = (s.history.empty() || !vo_relative)
                                   ? s.t_init_next
                                   : (s.history.back().inverse() * *vo_relative).inverse();
        s.t_init_next = cand_b;
        FrameDiagnostics dg;
        const auto r = single_frame(s, gt_cur, dg);
        const bool take_a = r.success && r.inlier_rmse < cfg_.loose_reproj_threshold;
        const PoseSE3 pose = take_a ? r.pose : cand_b;
        dg.used_vo = !take_a;
        s.history.push_back(pose);
        s.t_init_next = pose;
        ++s.frame_index;
        fill_error(dg, pose, gt_cur);
        if (diag) *diag = std::move(dg);
        return pose;
    }

private:
    struct SingleResult {
        PoseSE3 pose;
        double inlier_rmse = 0.0;
        bool success = false;
    };

    SingleResult single_frame(const TrackerState& s, const PoseSE3& gt_cur, FrameDiagnostics& dg) const {
        dg.frame = s.frame_index;
        detail::StageClock clock;
        const PoseSE3 t_init = s.t_init_next;
        const PointCloud crop = map_->crop(t_init, cfg_.crop);
        dg.ms_crop = clock.lap();
        const DepthMap depth = remove_occlusions(render_depth(crop, cfg_.camera, t_init), cfg_.occlusion);
        dg.ms_render = clock.lap();
        const FlowTriplet flows =
            provider_->estimate({&depth, &crop, t_init, gt_cur, gt_cur, branch_noise(cfg_, s.frame_index), false});
        dg.ms_flow = clock.lap();
        const auto cur = detail::locate(depth, flows.f_c2d, crop, t_init, cfg_,
                                        detail::mix_seed(cfg_.seed, static_cast<std::uint64_t>(s.frame_index), 11));
        dg.ms_pnp = clock.lap();
        dg.inliers_cur = cur.result.success ? cur.result.inlier_count : 0;
        return {cur.result.pose, cur.result.inlier_rmse, cur.result.success};
    }

    static void fill_error(FrameDiagnostics& dg, const std::optional<PoseSE3>& est, const PoseSE3& gt) {
        if (!est) {
            dg.rot_err_deg = dg.transl_err_cm = std::nan("");
            return;
        }
        const PoseErrorValue e = pose_error(*est, gt);
        dg.rot_err_deg = e.rot_deg;
        dg.transl_err_cm = 100.0 * e.transl_m;
    }

    TrackerConfig cfg_;
    const GlobalMap* map_;
    std::shared_ptr<const FlowProvider> provider_;
};

struct RunResult {
    Trajectory trajectory;  // world_from_cam, one pose per tracked frame
    std::vector<FrameDiagnostics> diagnostics;
    bool complete = true;
    int failed_frame = -1;
};

/// Folds the configured step over every frame of the scenario. Tracking stops
/// at the first failure and the partial trajectory is returned.
inline RunResult run(const TrackerConfig& cfg, const Scenario& sc, const PoseSE3& t0,
                     std::shared_ptr<const FlowProvider> provider = nullptr) {
    Tracker tracker(cfg, sc.map, std::move(provider));
    TrackerState st = init(t0);
    RunResult res;
    const int n = static_cast<int>(sc.gt.size());
    auto gt = [&](int i) { return sc.gt.cam_pose(static_cast<std::size_t>(i)); };
    for (int i = 0; i < n && !st.failed; ++i) {
        FrameDiagnostics dg;
        switch (cfg.mode) {
            case TrackMode::kFrameByFrame:
                tracker.step_frame_by_frame(st, gt(i), &dg);
                break;
            case TrackMode::kLooseCoupled: {
                std::optional<PoseSE3> vo;
                if (i > 0 && static_cast<std::size_t>(i - 1) < sc.vo.size()) vo = sc.vo[static_cast<std::size_t>(i - 1)];
                tracker.step_loose_coupled(st, gt(i), vo, &dg);
                break;
            }
            case TrackMode::kMultiView:
                if (i + 1 < n) {
                    tracker.step_multi_view(st, gt(i), gt(i + 1), &dg);
                } else if (n == 1) {
                    tracker.step_frame_by_frame(st, gt(i), &dg);
                } else {
                    // The last frame was already solved as the "next" pose of
                    // the previous pair.
                    dg.frame = i;
                    st.history.push_back(st.t_init_next);
                    ++st.frame_index;
                    const PoseErrorValue e = pose_error(st.t_init_next, gt(i));
                    dg.rot_err_deg = e.rot_deg;
                    dg.transl_err_cm = 100.0 * e.transl_m;
                }
                break;
        }
        res.diagnostics.push_back(std::move(dg));
        if (st.failed) {
            res.complete = false;
            res.failed_frame = i;
        }
    }
    res.trajectory = Trajectory::from_cam_poses(st.history);
    return res;
}

/// Per-frame diagnostics CSV.
inline std::string diagnostics_csv(const std::vector<FrameDiagnostics>& rows) {
    std::string s =
        "frame,rot_err_deg,transl_err_cm,inliers_cur,inliers_next,e_initial,e_final,ms_crop,ms_render,ms_flow,ms_pnp,"
        "ms_optimize,used_vo\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%zu,%zu,%.17g,%.17g,%.3f,%.3f,%.3f,%.3f,%.3f,%d\n", r.frame,
                      r.rot_err_deg, r.transl_err_cm, r.inliers_cur, r.inliers_next, r.e_initial, r.e_final,
                      r.ms_crop, r.ms_render, r.ms_flow, r.ms_pnp, r.ms_optimize, r.used_vo ? 1 : 0);
        s += buf;
    }
    return s;
}

/// Per-iteration energy trace CSV across all frames.
inline std::string energy_trace_csv(const std::vector<FrameDiagnostics>& rows) {
    std::string s = "frame,iteration,energy,lambda,accepted\n";
    char buf[256];
    for (const auto& r : rows) {
        for (const auto& it : r.trace) {
            std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.6g,%d\n", r.frame, it.iteration, it.energy, it.lambda,
                          it.accepted ? 1 : 0);
            s += buf;
        }
    }
    return s;
}

}  // namespace mvtrack
