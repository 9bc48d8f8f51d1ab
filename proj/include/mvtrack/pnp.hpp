#pragma once

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/depth_render.hpp"
#include "mvtrack/least_squares.hpp"
#include "mvtrack/map_manager.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvtrack {

struct Correspondence {
    Vec3 p_world = Vec3::Zero();
    Vec2 x_img = Vec2::Zero();
    double weight = 1.0;
};

class TooFewCorrespondences : public std::invalid_argument {
public:
    explicit TooFewCorrespondences(std::size_t n)
        : std::invalid_argument("PnP needs at least 4 correspondences, got " + std::to_string(n)) {}
};

class DegenerateConfiguration : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RansacConfig {
    int max_iters = 1000;
    double inlier_threshold = 2.0;  // px
    int min_inliers = 20;
    double confidence = 0.99;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_iters < 1) throw std::invalid_argument("ransac.max_iters must be >= 1");
        if (!(inlier_threshold > 0.0)) throw std::invalid_argument("ransac.inlier_threshold must be positive");
        if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("ransac.confidence must lie in (0, 1)");
        if (min_inliers < 0) throw std::invalid_argument("ransac.min_inliers must be non-negative");
    }
};

/// One correspondence per pixel valid in both the depth map and the flow:
/// the pixel's source point and the pixel displaced by the flow.
inline std::vector<Correspondence> correspondences_from_flow(const DepthMap& d, const FlowField& f,
                                                             const PointCloud& cloud) {
    if (d.width != f.width || d.height != f.height)
        throw std::invalid_argument("correspondences_from_flow: depth map and flow differ in size");
    std::vector<Correspondence> out;
    for (int v = 0; v < d.height; ++v) {
        for (int u = 0; u < d.width; ++u) {
            const std::size_t i = d.index(u, v);
            if (!d.valid[i] || !f.valid[i]) continue;
            out.push_back({cloud.points[static_cast<std::size_t>(d.source[i])], Vec2(u + f.du[i], v + f.dv[i]), 1.0});
        }
    }
    return out;
}

/// Residual h(K, T, P) - x and its Jacobian with respect to T * exp(xi).
inline bool reprojection_residual(const CameraIntrinsics& k, const Mat3& r, const Vec3& t, const Correspondence& c,
                                  Vec2& res, Mat26* jac) {
    Vec2 uv;
    if (!project_with_jacobian(k, r, t, c.p_world, uv, jac)) return false;
    res = uv - c.x_img;
    return true;
}

namespace detail {

/// Robust reprojection cost of a single pose; points behind the camera add a
/// fixed penalty so that the cost stays comparable across poses.
struct ReprojectionProblem {
    static constexpr int kDim = 6;
    using State = PoseSE3;
    using MatD = Eigen::Matrix<double, 6, 6>;
    using VecD = Vec6;

    std::span<const Correspondence> corrs;
    const CameraIntrinsics* k;
    Huber huber;
    bool robust = true;

    double block_cost(double sq) const { return robust ? huber.cost(sq) : sq; }
    double block_weight(double sq) const { return robust ? huber.weight(sq) : 1.0; }
    double behind_penalty() const { return robust ? 2.0 * huber.delta * 1e4 : 1e8; }

    double energy(const State& s) const {
        const Mat3 r = s.rotation_matrix();
        double e = 0.0;
        Vec2 res;
        for (const auto& c : corrs) {
            if (reprojection_residual(*k, r, s.translation(), c, res, nullptr))
                e += c.weight * block_cost(res.squaredNorm());
            else
                e += c.weight * behind_penalty();
        }
        return e;
    }

    double linearize(const State& s, MatD& h, VecD& g) const {
        const Mat3 r = s.rotation_matrix();
        h.setZero();
        g.setZero();
        double e = 0.0;
        Vec2 res;
        Mat26 j;
        for (const auto& c : corrs) {
            if (!reprojection_residual(*k, r, s.translation(), c, res, &j)) {
                e += c.weight * behind_penalty();
                continue;
            }
            const double sq = res.squaredNorm();
            e += c.weight * block_cost(sq);
            const double w = c.weight * block_weight(sq);
            h.noalias() += w * j.transpose() * j;
            g.noalias() += w * j.transpose() * res;
        }
        return e;
    }

    State retract(const State& s, const VecD& delta) const { return s * se3_exp(delta); }
};

inline void check_not_collinear(std::span<const Correspondence> corrs) {
    Vec3 mean = Vec3::Zero();
    for (const auto& c : corrs) mean += c.p_world;
    mean /= static_cast<double>(corrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& c : corrs) cov += (c.p_world - mean) * (c.p_world - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov, Eigen::EigenvaluesOnly);
    const double largest = es.eigenvalues()[2];
    if (!(largest > 0.0) || es.eigenvalues()[1] <= 1e-12 * largest)
        throw DegenerateConfiguration("PnP: correspondences are collinear in 3D");
}

}  // namespace detail

struct RefineOptions {
    int max_iters = 50;
    double huber_delta = 2.0;
    bool robust = true;
    double rel_tol = 1e-10;
};

struct RefineResult {
    PoseSE3 pose;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) on the weighted, Huber-robust
/// reprojection cost. Returns the best iterate; `converged` is false when the
/// iteration budget ran out.
inline RefineResult refine_pose(std::span<const Correspondence> corrs, const CameraIntrinsics& k, const PoseSE3& t0,
                                const RefineOptions& opts = {}) {
    if (corrs.size() < 4) throw TooFewCorrespondences(corrs.size());
    detail::ReprojectionProblem prob{corrs, &k, Huber{opts.huber_delta}, opts.robust};
    PoseSE3 pose = t0;
    LmOptions lm;
    lm.max_iters = opts.max_iters;
    lm.rel_tol = opts.rel_tol;
    const auto out = levenberg_marquardt(prob, pose, lm, false);
    return {pose, out.initial_energy, out.final_energy, out.iterations, out.status == LmStatus::kConverged};
}

/// Reprojection cost used by refine_pose, exposed for tests and diagnostics.
inline double reprojection_cost(std::span<const Correspondence> corrs, const CameraIntrinsics& k, const PoseSE3& pose,
                                double huber_delta = 2.0) {
    return detail::ReprojectionProblem{corrs, &k, Huber{huber_delta}, true}.energy(pose);
}

struct PnpResult {
    PoseSE3 pose;
    std::vector<std::uint8_t> inliers;
    std::size_t inlier_count = 0;
    double inlier_rmse = 0.0;  // px
    int hypotheses = 0;
    bool success = false;
};

namespace detail {

inline std::size_t score_inliers(std::span<const Correspondence> corrs, const CameraIntrinsics& k, const PoseSE3& pose,
                                 double threshold, std::vector<std::uint8_t>* mask, double* sq_sum = nullptr) {
    const Mat3 r = pose.rotation_matrix();
    const double thr2 = threshold * threshold;
    std::size_t n = 0;
    double acc = 0.0;
    if (mask) mask->assign(corrs.size(), 0);
    Vec2 res;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
        if (!reprojection_residual(k, r, pose.translation(), corrs[i], res, nullptr)) continue;
        const double sq = res.squaredNorm();
        if (sq < thr2) {
            ++n;
            acc += sq;
            if (mask) (*mask)[i] = 1;
        }
    }
    if (sq_sum) *sq_sum = acc;
    return n;
}

}  // namespace detail

/// RANSAC over 4-point samples. Each hypothesis is a least-squares refinement
/// of T_init on the sample; the best hypothesis is refined on its inliers.
/// On failure (fewer than min_inliers) the returned pose is T_init.
inline PnpResult solve_pnp_ransac(std::span<const Correspondence> corrs, const CameraIntrinsics& k,
                                  const PoseSE3& t_init, const RansacConfig& cfg) {
    cfg.validate();
    if (corrs.size() < 4) throw TooFewCorrespondences(corrs.size());
    detail::check_not_collinear(corrs);

    std::mt19937_64 rng(cfg.seed);
    PnpResult best;
    best.pose = t_init;
    std::size_t best_count = 0;
    double best_sq = 0.0;
    bool have_best = false;
    const double log_fail = std::log(1.0 - cfg.confidence);
    double needed = static_cast<double>(cfg.max_iters);
    std::array<Correspondence, 4> sample;
    RefineOptions minimal;
    minimal.max_iters = 10;
    minimal.robust = false;
    minimal.rel_tol = 1e-8;

    int it = 0;
    for (; it < cfg.max_iters && it < needed; ++it) {
        std::array<std::size_t, 4> idx{};
        for (int s = 0; s < 4; ++s) {
            bool fresh;
            do {
                idx[s] = std::uniform_int_distribution<std::size_t>(0, corrs.size() - 1)(rng);
                fresh = std::find(idx.begin(), idx.begin() + s, idx[s]) == idx.begin() + s;
            } while (!fresh);
            sample[s] = corrs[idx[s]];
        }
        const PoseSE3 hyp = refine_pose(sample, k, t_init, minimal).pose;
        double sq = 0.0;
        const std::size_t count = detail::score_inliers(corrs, k, hyp, cfg.inlier_threshold, nullptr, &sq);
        if (!have_best || count > best_count || (count == best_count && sq < best_sq)) {
            have_best = true;
            best_count = count;
            best_sq = sq;
            best.pose = hyp;
            const double ratio = static_cast<double>(count) / static_cast<double>(corrs.size());
            const double p_all = std::pow(ratio, 4.0);
            if (p_all >= 1.0)
                needed = 0.0;
            else if (p_all > 0.0)
                needed = std::min(needed, log_fail / std::log(1.0 - p_all));
        }
    }
    best.hypotheses = it;

    if (best_count < static_cast<std::size_t>(std::max(cfg.min_inliers, 4))) {
        best.pose = t_init;
        best.success = false;
        best.inlier_count = best_count;
        return best;
    }

    // Refine on the inlier set, re-select inliers at the refined pose, refine again.
    RefineOptions robust;
    robust.huber_delta = cfg.inlier_threshold;
    PoseSE3 pose = best.pose;
    std::vector<std::uint8_t> mask;
    for (int round = 0; round < 2; ++round) {
        detail::score_inliers(corrs, k, pose, cfg.inlier_threshold, &mask);
        std::vector<Correspondence> in;
        for (std::size_t i = 0; i < corrs.size(); ++i) {
            if (mask[i]) in.push_back(corrs[i]);
        }
        if (in.size() < 4) break;
        pose = refine_pose(in, k, pose, robust).pose;
    }
    double sq = 0.0;
    best.inlier_count = detail::score_inliers(corrs, k, pose, cfg.inlier_threshold, &best.inliers, &sq);
    best.pose = pose;
    best.inlier_rmse = best.inlier_count > 0 ? std::sqrt(sq / static_cast<double>(best.inlier_count)) : 0.0;
    best.success = best.inlier_count >= static_cast<std::size_t>(std::max(cfg.min_inliers, 4));
    if (!best.success) best.pose = t_init;
    return best;
}

}  // namespace mvtrack
