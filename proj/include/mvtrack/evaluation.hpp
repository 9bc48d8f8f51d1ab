#pragma once

#include "mvtrack/core_geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvtrack {

/// Time-ordered camera poses stored as world_from_cam, as in KITTI pose files.
struct Trajectory {
    std::vector<PoseSE3> poses;
    std::vector<double> timestamps;  // empty or parallel to poses

    std::size_t size() const { return poses.size(); }
    bool empty() const { return poses.empty(); }

    void validate() const {
        if (!timestamps.empty() && timestamps.size() != poses.size())
            throw std::invalid_argument("trajectory timestamps must be parallel to poses");
        for (std::size_t i = 1; i < timestamps.size(); ++i) {
            if (timestamps[i] < timestamps[i - 1]) throw std::invalid_argument("trajectory timestamps must not decrease");
        }
    }

    static Trajectory from_cam_poses(const std::vector<PoseSE3>& cam_from_world) {
        Trajectory t;
        t.poses.reserve(cam_from_world.size());
        for (const auto& p : cam_from_world) t.poses.push_back(p.inverse());
        return t;
    }
    /// The i-th pose as cam_from_world, the convention used for projection.
    PoseSE3 cam_pose(std::size_t i) const { return poses[i].inverse(); }
};

class LengthMismatch : public std::invalid_argument {
public:
    LengthMismatch(const char* what, std::size_t a, std::size_t b)
        : std::invalid_argument(std::string(what) + ": trajectories differ in length (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")") {}
};

class MalformedPoseFile : public std::runtime_error {
public:
    MalformedPoseFile(const std::string& path, std::size_t line, const std::string& why)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + why), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {};
    const double n = static_cast<double>(xs.size());
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double var = 0.0;
    for (const double x : xs) var += (x - m) * (x - m);
    return {m, std::sqrt(var / n)};
}

/// Median of a copy of xs (mean of the two middle elements for even sizes).
inline double median(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// RMSE of position differences. With `align`, est is first mapped onto gt by
/// the least-squares rigid transform (no scale).
inline double ate(const Trajectory& est, const Trajectory& gt, bool align = false) {
    if (est.size() != gt.size()) throw LengthMismatch("ate", est.size(), gt.size());
    const std::size_t n = est.size();
    if (n == 0) return 0.0;
    Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(n)), dst(3, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        src.col(static_cast<Eigen::Index>(i)) = est.poses[i].translation();
        dst.col(static_cast<Eigen::Index>(i)) = gt.poses[i].translation();
    }
    if (align && n >= 2) {
        const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
        src = (t.topLeftCorner<3, 3>() * src).colwise() + t.topRightCorner<3, 1>();
    } else if (align) {
        src = dst;
    }
    return std::sqrt((src - dst).colwise().squaredNorm().sum() / static_cast<double>(n));
}

struct RpeStats {
    MeanStd transl;  // meters
    MeanStd rot;     // degrees
    std::size_t pairs = 0;
};

/// Relative pose error over frame offset `delta`:
/// (gt_i^-1 gt_{i+d})^-1 (est_i^-1 est_{i+d}) for every valid i.
inline RpeStats rpe(const Trajectory& est, const Trajectory& gt, int delta = 1) {
    if (est.size() != gt.size()) throw LengthMismatch("rpe", est.size(), gt.size());
    if (delta < 1) throw std::invalid_argument("rpe: delta must be >= 1");
    if (est.size() <= static_cast<std::size_t>(delta))
        throw std::invalid_argument("rpe: trajectory of length " + std::to_string(est.size()) +
                                    " is too short for delta " + std::to_string(delta));
    std::vector<double> tr, rot;
    const std::size_t d = static_cast<std::size_t>(delta);
    for (std::size_t i = 0; i + d < est.size(); ++i) {
        const PoseSE3 re = est.poses[i].inverse() * est.poses[i + d];
        const PoseSE3 rg = gt.poses[i].inverse() * gt.poses[i + d];
        const PoseSE3 err = rg.inverse() * re;
        tr.push_back(err.translation().norm());
        rot.push_back(rad2deg(rotation_angle(err.rotation())));
    }
    return {mean_std(tr), mean_std(rot), tr.size()};
}

struct PoseErrorStats {
    MeanStd rot_deg;
    MeanStd transl_m;
    double rot_median_deg = 0.0;
    double transl_median_m = 0.0;
    double failure_rate = 0.0;
    std::vector<PoseErrorValue> per_frame;
};

inline constexpr double kDefaultFailureThreshold = 4.0;  // meters

/// Per-frame errors and their summary. A frame fails when its translation
/// error is strictly greater than `fail_threshold`.
inline PoseErrorStats pose_error_stats(const Trajectory& est, const Trajectory& gt,
                                       double fail_threshold = kDefaultFailureThreshold) {
    if (est.size() != gt.size()) throw LengthMismatch("pose_error_stats", est.size(), gt.size());
    PoseErrorStats s;
    std::vector<double> rot, tr;
    std::size_t failed = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const PoseErrorValue e = pose_error(est.cam_pose(i), gt.cam_pose(i));
        s.per_frame.push_back(e);
        rot.push_back(e.rot_deg);
        tr.push_back(e.transl_m);
        if (e.transl_m > fail_threshold) ++failed;
    }
    s.rot_deg = mean_std(rot);
    s.transl_m = mean_std(tr);
    s.rot_median_deg = median(rot);
    s.transl_median_m = median(tr);
    s.failure_rate = est.empty() ? 0.0 : static_cast<double>(failed) / static_cast<double>(est.size());
    return s;
}

struct MetricsReport {
    std::size_t frames = 0;
    double ate_rmse = 0.0;  // meters
    MeanStd rpe_transl;     // meters
    MeanStd rpe_rot;        // degrees
    MeanStd rot_err;        // degrees
    MeanStd transl_err;     // meters
    double rot_median = 0.0;
    double transl_median = 0.0;
    double failure_rate = 0.0;
    bool complete = true;
};

struct EvalOptions {
    bool align = false;
    int rpe_delta = 1;
    double fail_threshold = kDefaultFailureThreshold;
};

inline MetricsReport evaluate(const Trajectory& est, const Trajectory& gt, const EvalOptions& opts = {},
                              bool complete = true) {
    MetricsReport r;
    r.frames = est.size();
    r.complete = complete;
    r.ate_rmse = ate(est, gt, opts.align);
    if (est.size() > static_cast<std::size_t>(opts.rpe_delta)) {
        const RpeStats s = rpe(est, gt, opts.rpe_delta);
        r.rpe_transl = s.transl;
        r.rpe_rot = s.rot;
    }
    const PoseErrorStats p = pose_error_stats(est, gt, opts.fail_threshold);
    r.rot_err = p.rot_deg;
    r.transl_err = p.transl_m;
    r.rot_median = p.rot_median_deg;
    r.transl_median = p.transl_median_m;
    r.failure_rate = p.failure_rate;
    return r;
}

/// Column order of the metrics CSV.
inline constexpr const char* kMetricsCsvHeader =
    "frames,ate_rmse_m,rpe_transl_mean_m,rpe_transl_std_m,rpe_rot_mean_deg,rpe_rot_std_deg,"
    "transl_mean_cm,transl_std_cm,transl_median_cm,rot_mean_deg,rot_std_deg,rot_median_deg,fail_pct,complete";

inline std::string metrics_csv_row(const MetricsReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g,%d", r.frames,
                  r.ate_rmse, r.rpe_transl.mean, r.rpe_transl.std, r.rpe_rot.mean, r.rpe_rot.std,
                  100.0 * r.transl_err.mean, 100.0 * r.transl_err.std, 100.0 * r.transl_median, r.rot_err.mean,
                  r.rot_err.std, r.rot_median, 100.0 * r.failure_rate, r.complete ? 1 : 0);
    return buf;
}

/// Human-readable summary table.
inline std::string format_report(const MetricsReport& r) {
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "frames           %zu\n"
                  "complete         %s\n"
                  "ATE rmse         %.4f m\n"
                  "RPE transl       %.4f +- %.4f m\n"
                  "RPE rot          %.4f +- %.4f deg\n"
                  "transl error     mean %.2f cm  std %.2f cm  median %.2f cm\n"
                  "rot error        mean %.4f deg  std %.4f deg  median %.4f deg\n"
                  "fail             %.2f %%\n",
                  r.frames, r.complete ? "yes" : "no", r.ate_rmse, r.rpe_transl.mean, r.rpe_transl.std,
                  r.rpe_rot.mean, r.rpe_rot.std, 100.0 * r.transl_err.mean, 100.0 * r.transl_err.std,
                  100.0 * r.transl_median, r.rot_err.mean, r.rot_err.std, r.rot_median, 100.0 * r.failure_rate);
    return buf;
}

namespace detail {
inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path);
}
}  // namespace detail

/// Writes the metrics CSV to `path` and the text table next to it (`path`.txt).
inline void emit_report(const MetricsReport& r, const std::string& path) {
    detail::write_text(path, std::string(kMetricsCsvHeader) + "\n" + metrics_csv_row(r) + "\n");
    detail::write_text(path + ".txt", format_report(r));
}

/// One KITTI line: row-major 3x4 world_from_cam.
inline std::string kitti_line(const PoseSE3& world_from_cam) {
    const Eigen::Matrix<double, 3, 4> m = world_from_cam.matrix3x4();
    std::string line;
    char buf[32];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            std::snprintf(buf, sizeof buf, "%.12e", m(r, c));
            if (!line.empty()) line += ' ';
            line += buf;
        }
    }
    return line;
}

inline void save_trajectory(const Trajectory& t, const std::string& path) {
    std::string text;
    for (const auto& p : t.poses) text += kitti_line(p) + "\n";
    detail::write_text(path, text);
}

inline Trajectory parse_trajectory(std::istream& is, const std::string& name = "<stream>") {
    Trajectory t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        Eigen::Matrix<double, 3, 4> m;
        std::size_t fields = 0;
        const char* p = line.data();
        const char* end = p + line.size();
        while (true) {
            while (p < end && (*p == ' ' || *p == '\t')) ++p;
            if (p >= end) break;
            double x = 0.0;
            const auto [q, ec] = std::from_chars(p, end, x);
            if (ec != std::errc() || (q < end && *q != ' ' && *q != '\t'))
                throw MalformedPoseFile(name, lineno, "non-numeric field " + std::to_string(fields + 1));
            if (fields < 12) m(static_cast<int>(fields / 4), static_cast<int>(fields % 4)) = x;
            ++fields;
            p = q;
        }
        if (fields != 12)
            throw MalformedPoseFile(name, lineno, "expected 12 fields, found " + std::to_string(fields));
        if (!m.allFinite()) throw MalformedPoseFile(name, lineno, "non-finite value");
        t.poses.push_back(PoseSE3::from_matrix3x4(m));
    }
    return t;
}

inline Trajectory load_trajectory(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return parse_trajectory(is, path);
}

/// Plot-ready per-frame CSV: frame, x, y, z, rot_err, transl_err.
inline void save_plot_csv(const Trajectory& est, const Trajectory& gt, const std::string& path) {
    const PoseErrorStats s = pose_error_stats(est, gt);
    std::string text = "frame,x,y,z,rot_err,transl_err\n";
    char buf[256];
    for (std::size_t i = 0; i < est.size(); ++i) {
        const Vec3& c = est.poses[i].translation();
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, c.x(), c.y(), c.z(),
                      s.per_frame[i].rot_deg, s.per_frame[i].transl_m);
        text += buf;
    }
    detail::write_text(path, text);
}

}  // namespace mvtrack
