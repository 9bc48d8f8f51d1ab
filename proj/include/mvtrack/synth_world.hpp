#pragma once

// Seeded street-corridor scenes, camera trajectories and a drifting visual
// odometry oracle.

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/depth_render.hpp"
#include "mvtrack/evaluation.hpp"
#include "mvtrack/map_manager.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvtrack {

/// Corridor along world +x. Units are meters and points per square meter.
struct SceneConfig {
    double extent = 600.0;         // corridor length ahead of the origin
    double ground_density = 0.5;
    double facade_density = 1.5;
    int pole_count = 60;
    double facade_height = 10.0;
    double corridor_half_width = 8.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(extent > 0.0)) throw std::invalid_argument("scene.extent must be positive");
        if (!(ground_density >= 0.0) || !(facade_density >= 0.0))
            throw std::invalid_argument("scene densities must be non-negative");
        if (pole_count < 0) throw std::invalid_argument("scene.pole_count must be non-negative");
        if (!(facade_height >= 6.0)) throw std::invalid_argument("scene.facade_height must be at least 6 m");
        if (!(corridor_half_width > 2.0)) throw std::invalid_argument("scene.corridor_half_width must exceed 2 m");
    }
};

enum class TrajectoryProfile { kStraight, kArc, kSCurve };

inline const char* to_string(TrajectoryProfile p) {
    switch (p) {
        case TrajectoryProfile::kStraight: return "straight";
        case TrajectoryProfile::kArc: return "arc";
        case TrajectoryProfile::kSCurve: return "s_curve";
    }
    return "?";
}

inline TrajectoryProfile parse_profile(const std::string& s) {
    if (s == "straight") return TrajectoryProfile::kStraight;
    if (s == "arc") return TrajectoryProfile::kArc;
    if (s == "s_curve") return TrajectoryProfile::kSCurve;
    throw std::invalid_argument("unknown trajectory profile '" + s + "' (expected straight, arc or s_curve)");
}

struct TrajectoryConfig {
    int frame_count = 100;
    double speed = 1.0;      // m/frame
    double turn_rate = 0.5;  // deg/frame; peak rate for s_curve
    TrajectoryProfile profile = TrajectoryProfile::kStraight;
    int s_curve_period = 100;  // frames
    double camera_height = 1.7;
    std::uint64_t seed = 1;  // recorded for manifests; the profiles are closed-form

    void validate() const {
        if (frame_count < 1) throw std::invalid_argument("trajectory.frame_count must be >= 1");
        if (!(speed >= 0.0)) throw std::invalid_argument("trajectory.speed must be non-negative");
        if (!std::isfinite(turn_rate)) throw std::invalid_argument("trajectory.turn_rate must be finite");
        if (s_curve_period < 2) throw std::invalid_argument("trajectory.s_curve_period must be >= 2");
    }
};

struct VoOracleConfig {
    double rot_drift_sigma = 0.0;     // deg/frame, per axis
    double transl_drift_sigma = 0.0;  // m/frame, per axis
    std::uint64_t seed = 1;

    void validate() const {
        if (!(rot_drift_sigma >= 0.0) || !(transl_drift_sigma >= 0.0))
            throw std::invalid_argument("vo sigmas must be non-negative");
    }
};

namespace detail {

/// Adds points uniformly on the vertical rectangle x in [x0, x1], y = y0,
/// z in [0, height].
inline void add_wall(PointCloud& c, std::mt19937_64& rng, double x0, double x1, double y0, double height,
                     double density) {
    const double area = (x1 - x0) * height;
    const auto n = static_cast<std::size_t>(std::floor(area * density));
    std::uniform_real_distribution<double> ux(x0, x1), uz(0.0, height);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ux(rng);
        const double z = uz(rng);
        c.points.emplace_back(x, y0, z);
    }
}

}  // namespace detail

/// Ground plane, two rows of near facades with gaps, deeper facades behind
/// them at graded distances, and poles along the curbs. z lies in
/// [0, facade_height].
inline PointCloud generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    PointCloud c;
    std::mt19937_64 rng(cfg.seed);
    const double x0 = -40.0, x1 = cfg.extent + 40.0;
    const double hw = cfg.corridor_half_width;

    if (cfg.ground_density > 0.0) {
        const auto n = static_cast<std::size_t>(std::floor((x1 - x0) * 2.0 * hw * cfg.ground_density));
        std::uniform_real_distribution<double> ux(x0, x1), uy(-hw, hw);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = ux(rng);
            const double y = uy(rng);
            c.points.emplace_back(x, y, 0.0);
        }
    }
    if (cfg.facade_density > 0.0) {
        std::uniform_real_distribution<double> near_len(15.0, 40.0), gap(4.0, 12.0), far_len(20.0, 50.0),
            far_gap(0.0, 5.0), near_h(4.0, cfg.facade_height), far_h(6.0, cfg.facade_height),
            far_off(hw + 6.0, hw + 18.0);
        for (const double side : {-1.0, 1.0}) {
            for (double x = x0; x < x1;) {
                const double len = near_len(rng);
                detail::add_wall(c, rng, x, std::min(x + len, x1), side * hw, near_h(rng), cfg.facade_density);
                x += len + gap(rng);
            }
            for (double x = x0; x < x1;) {
                const double len = far_len(rng);
                const double y = side * far_off(rng);
                detail::add_wall(c, rng, x, std::min(x + len, x1), y, far_h(rng), cfg.facade_density);
                x += len + far_gap(rng);
            }
        }
    }
    if (cfg.pole_count > 0) {
        constexpr double kRadius = 0.15, kHeight = 6.0;
        constexpr int kRing = 8, kLevels = 12;
        std::uniform_real_distribution<double> ux(0.0, cfg.extent), uy(hw - 1.5, hw - 0.5), jitter(-0.5, 0.5);
        std::bernoulli_distribution left(0.5);
        for (int p = 0; p < cfg.pole_count; ++p) {
            const double px = ux(rng);
            const double py = (left(rng) ? 1.0 : -1.0) * uy(rng);
            for (int l = 0; l < kLevels; ++l) {
                for (int a = 0; a < kRing; ++a) {
                    const double ang = 2.0 * kPi * (a + 0.5 * jitter(rng)) / kRing;
                    const double z = kHeight * (l + 0.5 + jitter(rng)) / kLevels;
                    c.points.emplace_back(px + kRadius * std::cos(ang), py + kRadius * std::sin(ang), z);
                }
            }
        }
    }
    return c;
}

/// world_from_cam rotation of a camera at yaw `heading` (rad) whose optical
/// axis is horizontal; yaw 0 looks along world +x with image "down" = -z.
inline Mat3 camera_rotation_for_heading(double heading) {
    Mat3 base;
    base << 0, 0, 1,
           -1, 0, 0,
            0, -1, 0;
    return Eigen::AngleAxisd(heading, Vec3::UnitZ()).toRotationMatrix() * base;
}

/// Heading (rad) of every frame for the profile.
inline std::vector<double> trajectory_headings(const TrajectoryConfig& cfg) {
    std::vector<double> h(static_cast<std::size_t>(cfg.frame_count));
    const double rate = deg2rad(cfg.turn_rate);
    for (int i = 0; i < cfg.frame_count; ++i) {
        switch (cfg.profile) {
            case TrajectoryProfile::kStraight: h[i] = 0.0; break;
            case TrajectoryProfile::kArc: h[i] = rate * i; break;
            case TrajectoryProfile::kSCurve: {
                // Peak heading rate equals turn_rate.
                const double w = 2.0 * kPi / cfg.s_curve_period;
                h[i] = (rate / w) * std::sin(w * i);
                break;
            }
        }
    }
    return h;
}

/// Each step moves `speed` meters along the mean of consecutive headings,
/// so consecutive positions are exactly `speed` apart.
inline Trajectory generate_trajectory(const TrajectoryConfig& cfg) {
    cfg.validate();
    const auto heading = trajectory_headings(cfg);
    Trajectory t;
    Vec3 p(0.0, 0.0, cfg.camera_height);
    for (int i = 0; i < cfg.frame_count; ++i) {
        if (i > 0) {
            const double a = 0.5 * (heading[i - 1] + heading[i]);
            p += cfg.speed * Vec3(std::cos(a), std::sin(a), 0.0);
        }
        t.poses.emplace_back(camera_rotation_for_heading(heading[i]), p);
    }
    return t;
}

/// Relative motions world_from_cam_i^-1 * world_from_cam_{i+1}, each
/// right-multiplied by exp of a seeded Gaussian twist.
inline std::vector<PoseSE3> vo_oracle(const Trajectory& gt, const VoOracleConfig& cfg) {
    cfg.validate();
    std::vector<PoseSE3> rel;
    if (gt.size() < 2) return rel;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double sr = deg2rad(cfg.rot_drift_sigma), st = cfg.transl_drift_sigma;
    for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
        PoseSE3 r = gt.poses[i].inverse() * gt.poses[i + 1];
        if (sr > 0.0 || st > 0.0) {
            Vec6 xi;
            for (int k = 0; k < 3; ++k) xi[k] = sr * n01(rng);
            for (int k = 3; k < 6; ++k) xi[k] = st * n01(rng);
            r = r * se3_exp(xi);
        }
        rel.push_back(r);
    }
    return rel;
}

/// Chains relative motions from a starting world_from_cam pose.
inline Trajectory integrate_vo(const PoseSE3& start, const std::vector<PoseSE3>& rel) {
    Trajectory t;
    t.poses.push_back(start);
    for (const auto& r : rel) t.poses.push_back(t.poses.back() * r);
    return t;
}

struct Scenario {
    GlobalMap map;
    Trajectory gt;               // world_from_cam
    std::vector<PoseSE3> vo;     // relative motions, gt.size() - 1 entries
};

class InsufficientVisibility : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Builds map, trajectory and VO; every ground-truth pose must see at least
/// `min_visible` pixels of the cropped map.
inline Scenario build_scenario(const SceneConfig& scene, const TrajectoryConfig& traj, const VoOracleConfig& vo,
                               const CameraIntrinsics& k, const CropExtents& crop, std::size_t min_visible = 500) {
    Scenario s{GlobalMap(generate_scene(scene), default_index_cell(crop)), generate_trajectory(traj), {}};
    s.vo = vo_oracle(s.gt, vo);
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
        const PoseSE3 cam = s.gt.cam_pose(i);
        const std::size_t n = render_depth(s.map.crop(cam, crop), k, cam).valid_count();
        if (n < min_visible)
            throw InsufficientVisibility("scenario frame " + std::to_string(i) + " sees only " + std::to_string(n) +
                                         " map pixels (need " + std::to_string(min_visible) + ")");
    }
    return s;
}

}  // namespace mvtrack
