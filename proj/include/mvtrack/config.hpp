#pragma once

// JSON run configuration with field-level validation messages.

#include "mvtrack/evaluation.hpp"
#include "mvtrack/synth_world.hpp"
#include "mvtrack/tracker.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace mvtrack {

using json = nlohmann::ordered_json;

class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& field, const std::string& why) : std::invalid_argument(field + ": " + why) {}
};

/// Everything needed to reproduce a synth/track/ablate run.
struct RunConfig {
    std::uint64_t seed = 1;
    SceneConfig scene;
    TrajectoryConfig trajectory;
    VoOracleConfig vo;
    TrackerConfig tracker;
    PerturbBounds init_perturbation;  // applied to the first ground-truth pose
    std::vector<TrackMode> ablate_modes{TrackMode::kFrameByFrame, TrackMode::kLooseCoupled, TrackMode::kMultiView};
    EvalOptions eval;
    bool write_energy_trace = false;

    /// Sub-seeds are functions of the top-level seed only.
    void derive_seeds() {
        scene.seed = detail::mix_seed(seed, 0x5C);
        trajectory.seed = detail::mix_seed(seed, 0x7A);
        vo.seed = detail::mix_seed(seed, 0x70);
        tracker.seed = detail::mix_seed(seed, 0x7C);
    }
    std::uint64_t init_seed() const { return detail::mix_seed(seed, 0x1A); }

    void validate() const;
};

namespace detail {

/// Reads one JSON object, reporting errors with the dotted field path and
/// rejecting unknown keys.
class FieldReader {
public:
    FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
    }
    ~FieldReader() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(field(k), "unknown field");
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(field(key), "expected a number");
            out = v->get<double>();
        }
    }
    template <class Int>
    void integer(const std::string& key, Int& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
            if constexpr (std::is_unsigned_v<Int>) {
                if (v->is_number_unsigned() || v->get<long long>() >= 0)
                    out = v->get<Int>();
                else
                    throw ConfigError(field(key), "expected a non-negative integer");
            } else {
                out = v->get<Int>();
            }
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    template <class Parse>
    void enumeration(const std::string& key, Parse parse) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(field(key), "expected a string");
            try {
                parse(v->get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(field(key), e.what());
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void check(bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw ConfigError(field, why);
}

inline void read_noise(const json& j, const std::string& path, FlowNoiseModel& m) {
    FieldReader r(j, path);
    r.number("gaussian_sigma", m.gaussian_sigma);
    r.number("outlier_fraction", m.outlier_fraction);
    r.number("outlier_magnitude", m.outlier_magnitude);
    r.number("dropout_fraction", m.dropout_fraction);
    check(m.gaussian_sigma >= 0.0, r.field("gaussian_sigma"), "must be >= 0");
    check(m.outlier_magnitude >= 0.0, r.field("outlier_magnitude"), "must be >= 0");
    check(m.outlier_fraction >= 0.0 && m.outlier_fraction <= 1.0, r.field("outlier_fraction"), "must lie in [0, 1]");
    check(m.dropout_fraction >= 0.0 && m.dropout_fraction <= 1.0, r.field("dropout_fraction"), "must lie in [0, 1]");
}

inline json noise_json(const FlowNoiseModel& m) {
    return {{"gaussian_sigma", m.gaussian_sigma},
            {"outlier_fraction", m.outlier_fraction},
            {"outlier_magnitude", m.outlier_magnitude},
            {"dropout_fraction", m.dropout_fraction}};
}

}  // namespace detail

inline void RunConfig::validate() const {
    using detail::check;
    check(scene.extent > 0.0, "scene.extent", "must be > 0");
    check(scene.ground_density >= 0.0, "scene.ground_density", "must be >= 0");
    check(scene.facade_density >= 0.0, "scene.facade_density", "must be >= 0");
    check(scene.pole_count >= 0, "scene.pole_count", "must be >= 0");
    check(scene.facade_height >= 6.0, "scene.facade_height", "must be >= 6");
    check(scene.corridor_half_width > 2.0, "scene.corridor_half_width", "must be > 2");
    check(trajectory.frame_count >= 1, "trajectory.frame_count", "must be >= 1");
    check(trajectory.speed >= 0.0, "trajectory.speed", "must be >= 0");
    check(trajectory.s_curve_period >= 2, "trajectory.s_curve_period", "must be >= 2");
    check(vo.rot_drift_sigma >= 0.0, "vo.rot_drift_sigma", "must be >= 0");
    check(vo.transl_drift_sigma >= 0.0, "vo.transl_drift_sigma", "must be >= 0");
    const auto& t = tracker;
    check(t.crop.forward > 0.0, "tracker.crop.forward", "must be > 0");
    check(t.crop.backward > 0.0, "tracker.crop.backward", "must be > 0");
    check(t.crop.lateral > 0.0, "tracker.crop.lateral", "must be > 0");
    check(t.camera.fx > 0.0, "tracker.camera.fx", "must be > 0");
    check(t.camera.fy > 0.0, "tracker.camera.fy", "must be > 0");
    check(t.camera.width > 0, "tracker.camera.width", "must be > 0");
    check(t.camera.height > 0, "tracker.camera.height", "must be > 0");
    check(t.occlusion.window >= 3 && t.occlusion.window % 2 == 1, "tracker.occlusion.window", "must be odd and >= 3");
    check(t.occlusion.min_sectors >= 1 && t.occlusion.min_sectors <= 8, "tracker.occlusion.min_sectors",
          "must lie in [1, 8]");
    check(t.occlusion.aperture_deg >= 0.0, "tracker.occlusion.aperture_deg", "must be >= 0");
    check(t.ransac.max_iters >= 1, "tracker.ransac.max_iters", "must be >= 1");
    check(t.ransac.inlier_threshold > 0.0, "tracker.ransac.inlier_threshold", "must be > 0");
    check(t.ransac.min_inliers >= 0, "tracker.ransac.min_inliers", "must be >= 0");
    check(t.ransac.confidence > 0.0 && t.ransac.confidence < 1.0, "tracker.ransac.confidence", "must lie in (0, 1)");
    check(t.energy.w_consist >= 0.0, "tracker.energy.w_consist", "must be >= 0");
    check(t.energy.w_reproj >= 0.0, "tracker.energy.w_reproj", "must be >= 0");
    check(t.energy.w_consist > 0.0 || t.energy.w_reproj > 0.0, "tracker.energy", "weights must not both be zero");
    check(t.energy.huber_delta > 0.0, "tracker.energy.huber_delta", "must be > 0");
    check(t.energy.max_iters >= 1, "tracker.energy.max_iters", "must be >= 1");
    check(t.energy.rel_tol >= 0.0, "tracker.energy.rel_tol", "must be >= 0");
    check(t.energy.lambda0 > 0.0, "tracker.energy.lambda0", "must be > 0");
    check(t.loose_reproj_threshold >= 0.0, "tracker.loose_reproj_threshold", "must be >= 0");
    check(t.failure_threshold > 0.0, "tracker.failure_threshold", "must be > 0");
    check(t.max_correspondences >= 4, "tracker.max_correspondences", "must be >= 4");
    for (std::size_t i = 0; i < t.episodes.size(); ++i) {
        const std::string p = "tracker.episodes[" + std::to_string(i) + "]";
        check(t.episodes[i].first_frame >= 0, p + ".first_frame", "must be >= 0");
        check(t.episodes[i].frame_count >= 0, p + ".frame_count", "must be >= 0");
    }
    check(init_perturbation.max_transl_per_axis >= 0.0, "init_perturbation.max_transl", "must be >= 0");
    check(init_perturbation.max_rot_per_axis >= 0.0, "init_perturbation.max_rot_deg", "must be >= 0");
    check(!ablate_modes.empty(), "ablate_modes", "must name at least one mode");
    check(eval.rpe_delta >= 1, "eval.rpe_delta", "must be >= 1");
    check(eval.fail_threshold > 0.0, "eval.fail_threshold", "must be > 0");
}

/// Parses a config object. Missing fields keep their defaults. A run
/// manifest (an object with "tool" and "config") is accepted as well.
inline RunConfig parse_config(const json& root) {
    const json& j = (root.is_object() && root.contains("tool") && root.contains("config")) ? root.at("config") : root;
    RunConfig c;
    {
        detail::FieldReader r(j, "");
        r.integer("seed", c.seed);
        if (const json* s = r.find("scene")) {
            detail::FieldReader q(*s, "scene");
            q.number("extent", c.scene.extent);
            q.number("ground_density", c.scene.ground_density);
            q.number("facade_density", c.scene.facade_density);
            q.integer("pole_count", c.scene.pole_count);
            q.number("facade_height", c.scene.facade_height);
            q.number("corridor_half_width", c.scene.corridor_half_width);
        }
        if (const json* s = r.find("trajectory")) {
            detail::FieldReader q(*s, "trajectory");
            q.integer("frame_count", c.trajectory.frame_count);
            q.number("speed", c.trajectory.speed);
            q.number("turn_rate", c.trajectory.turn_rate);
            q.enumeration("profile", [&](const std::string& v) { c.trajectory.profile = parse_profile(v); });
            q.integer("s_curve_period", c.trajectory.s_curve_period);
            q.number("camera_height", c.trajectory.camera_height);
        }
        if (const json* s = r.find("vo")) {
            detail::FieldReader q(*s, "vo");
            q.number("rot_drift_sigma", c.vo.rot_drift_sigma);
            q.number("transl_drift_sigma", c.vo.transl_drift_sigma);
        }
        if (const json* s = r.find("tracker")) {
            auto& t = c.tracker;
            detail::FieldReader q(*s, "tracker");
            q.enumeration("mode", [&](const std::string& v) { t.mode = parse_mode(v); });
            if (const json* x = q.find("crop")) {
                detail::FieldReader w(*x, "tracker.crop");
                w.number("forward", t.crop.forward);
                w.number("backward", t.crop.backward);
                w.number("lateral", t.crop.lateral);
            }
            if (const json* x = q.find("camera")) {
                detail::FieldReader w(*x, "tracker.camera");
                w.number("fx", t.camera.fx);
                w.number("fy", t.camera.fy);
                w.number("cx", t.camera.cx);
                w.number("cy", t.camera.cy);
                w.integer("width", t.camera.width);
                w.integer("height", t.camera.height);
            }
            if (const json* x = q.find("occlusion")) {
                detail::FieldReader w(*x, "tracker.occlusion");
                w.number("aperture_deg", t.occlusion.aperture_deg);
                w.integer("window", t.occlusion.window);
                w.integer("min_sectors", t.occlusion.min_sectors);
            }
            if (const json* x = q.find("noise")) detail::read_noise(*x, "tracker.noise", t.noise);
            if (const json* x = q.find("episodes")) {
                if (!x->is_array()) throw ConfigError("tracker.episodes", "expected an array");
                for (std::size_t i = 0; i < x->size(); ++i) {
                    const std::string p = "tracker.episodes[" + std::to_string(i) + "]";
                    NoiseEpisode e;
                    detail::FieldReader w((*x)[i], p);
                    w.integer("first_frame", e.first_frame);
                    w.integer("frame_count", e.frame_count);
                    w.enumeration("branch", [&](const std::string& v) { e.branch = parse_branch(v); });
                    if (const json* n = w.find("noise")) detail::read_noise(*n, p + ".noise", e.noise);
                    t.episodes.push_back(e);
                }
            }
            if (const json* x = q.find("ransac")) {
                detail::FieldReader w(*x, "tracker.ransac");
                w.integer("max_iters", t.ransac.max_iters);
                w.number("inlier_threshold", t.ransac.inlier_threshold);
                w.integer("min_inliers", t.ransac.min_inliers);
                w.number("confidence", t.ransac.confidence);
            }
            if (const json* x = q.find("energy")) {
                detail::FieldReader w(*x, "tracker.energy");
                w.number("w_consist", t.energy.w_consist);
                w.number("w_reproj", t.energy.w_reproj);
                w.number("huber_delta", t.energy.huber_delta);
                w.integer("max_iters", t.energy.max_iters);
                w.number("rel_tol", t.energy.rel_tol);
                w.number("lambda0", t.energy.lambda0);
            }
            q.number("loose_reproj_threshold", t.loose_reproj_threshold);
            q.number("failure_threshold", t.failure_threshold);
            q.integer("max_correspondences", t.max_correspondences);
            q.integer("max_consistency_points", t.max_consistency_points);
        }
        if (const json* s = r.find("init_perturbation")) {
            detail::FieldReader q(*s, "init_perturbation");
            q.number("max_transl", c.init_perturbation.max_transl_per_axis);
            q.number("max_rot_deg", c.init_perturbation.max_rot_per_axis);
        }
        if (const json* s = r.find("ablate_modes")) {
            if (!s->is_array()) throw ConfigError("ablate_modes", "expected an array of mode names");
            c.ablate_modes.clear();
            for (std::size_t i = 0; i < s->size(); ++i) {
                const std::string p = "ablate_modes[" + std::to_string(i) + "]";
                if (!(*s)[i].is_string()) throw ConfigError(p, "expected a string");
                try {
                    c.ablate_modes.push_back(parse_mode((*s)[i].get<std::string>()));
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(p, e.what());
                }
            }
        }
        if (const json* s = r.find("eval")) {
            detail::FieldReader q(*s, "eval");
            q.boolean("align", c.eval.align);
            q.integer("rpe_delta", c.eval.rpe_delta);
            q.number("fail_threshold", c.eval.fail_threshold);
        }
        r.boolean("write_energy_trace", c.write_energy_trace);
    }
    c.validate();
    c.derive_seeds();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path, std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Complete snapshot of a config; parse_config(config_to_json(c)) == c.
inline json config_to_json(const RunConfig& c) {
    const auto& t = c.tracker;
    json episodes = json::array();
    for (const auto& e : t.episodes) {
        episodes.push_back({{"first_frame", e.first_frame},
                            {"frame_count", e.frame_count},
                            {"branch", to_string(e.branch)},
                            {"noise", detail::noise_json(e.noise)}});
    }
    json modes = json::array();
    for (const auto m : c.ablate_modes) modes.push_back(to_string(m));
    return {
        {"seed", c.seed},
        {"scene",
         {{"extent", c.scene.extent},
          {"ground_density", c.scene.ground_density},
          {"facade_density", c.scene.facade_density},
          {"pole_count", c.scene.pole_count},
          {"facade_height", c.scene.facade_height},
          {"corridor_half_width", c.scene.corridor_half_width}}},
        {"trajectory",
         {{"frame_count", c.trajectory.frame_count},
          {"speed", c.trajectory.speed},
          {"turn_rate", c.trajectory.turn_rate},
          {"profile", to_string(c.trajectory.profile)},
          {"s_curve_period", c.trajectory.s_curve_period},
          {"camera_height", c.trajectory.camera_height}}},
        {"vo", {{"rot_drift_sigma", c.vo.rot_drift_sigma}, {"transl_drift_sigma", c.vo.transl_drift_sigma}}},
        {"tracker",
         {{"mode", to_string(t.mode)},
          {"crop", {{"forward", t.crop.forward}, {"backward", t.crop.backward}, {"lateral", t.crop.lateral}}},
          {"camera",
           {{"fx", t.camera.fx},
            {"fy", t.camera.fy},
            {"cx", t.camera.cx},
            {"cy", t.camera.cy},
            {"width", t.camera.width},
            {"height", t.camera.height}}},
          {"occlusion",
           {{"aperture_deg", t.occlusion.aperture_deg},
            {"window", t.occlusion.window},
            {"min_sectors", t.occlusion.min_sectors}}},
          {"noise", detail::noise_json(t.noise)},
          {"episodes", episodes},
          {"ransac",
           {{"max_iters", t.ransac.max_iters},
            {"inlier_threshold", t.ransac.inlier_threshold},
            {"min_inliers", t.ransac.min_inliers},
            {"confidence", t.ransac.confidence}}},
          {"energy",
           {{"w_consist", t.energy.w_consist},
            {"w_reproj", t.energy.w_reproj},
            {"huber_delta", t.energy.huber_delta},
            {"max_iters", t.energy.max_iters},
            {"rel_tol", t.energy.rel_tol},
            {"lambda0", t.energy.lambda0}}},
          {"loose_reproj_threshold", t.loose_reproj_threshold},
          {"failure_threshold", t.failure_threshold},
          {"max_correspondences", t.max_correspondences},
          {"max_consistency_points", t.max_consistency_points}}},
        {"init_perturbation",
         {{"max_transl", c.init_perturbation.max_transl_per_axis},
          {"max_rot_deg", c.init_perturbation.max_rot_per_axis}}},
        {"ablate_modes", modes},
        {"eval", {{"align", c.eval.align}, {"rpe_delta", c.eval.rpe_delta}, {"fail_threshold", c.eval.fail_threshold}}},
        {"write_energy_trace", c.write_energy_trace},
    };
}

}  // namespace mvtrack
