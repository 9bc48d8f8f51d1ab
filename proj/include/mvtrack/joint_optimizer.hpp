#pragma once

// Joint refinement of two adjacent camera poses from their 2D-3D
// correspondences and the optical flow between the two images.

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/depth_render.hpp"
#include "mvtrack/flow.hpp"
#include "mvtrack/least_squares.hpp"
#include "mvtrack/pnp.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mvtrack {

struct EnergyConfig {
    double w_consist = 1.0;
    double w_reproj = 1.0;
    double huber_delta = 2.0;  // px
    int max_iters = 50;
    double rel_tol = 1e-6;
    double lambda0 = 1e-4;

    void validate() const {
        if (!(w_consist >= 0.0) || !(w_reproj >= 0.0)) throw std::invalid_argument("energy weights must be non-negative");
        if (w_consist == 0.0 && w_reproj == 0.0) throw std::invalid_argument("energy weights must not both be zero");
        if (!(huber_delta > 0.0)) throw std::invalid_argument("energy.huber_delta must be positive");
        if (max_iters < 1) throw std::invalid_argument("energy.max_iters must be >= 1");
        if (!(rel_tol >= 0.0)) throw std::invalid_argument("energy.rel_tol must be non-negative");
        if (!(lambda0 > 0.0)) throw std::invalid_argument("energy.lambda0 must be positive");
    }
};

class EmptyResidualSet : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A map point with the current-to-next image flow sampled at its projection
/// in the current frame. The sample is taken once and then held fixed.
struct ConsistencyPoint {
    Vec3 p_world = Vec3::Zero();
    Vec2 flow = Vec2::Zero();
};

/// Samples f_c2n bilinearly at the T_cur projection of each point. Points
/// behind the camera or without a valid flow sample are skipped.
inline std::vector<ConsistencyPoint> sample_consistency_points(std::span<const Vec3> points, const CameraIntrinsics& k,
                                                               const PoseSE3& t_cur, const FlowField& f_c2n) {
    std::vector<ConsistencyPoint> out;
    out.reserve(points.size());
    for (const Vec3& p : points) {
        const auto px = try_h_project(k, t_cur, p);
        if (!px) continue;
        const auto f = sample_bilinear(f_c2n, px->u, px->v);
        if (!f) continue;
        out.push_back({p, *f});
    }
    return out;
}

/// Keeps every ceil(n / cap)-th element so that at most `cap` remain.
template <class T>
std::vector<T> stride_subsample(std::vector<T> v, std::size_t cap) {
    if (cap == 0 || v.size() <= cap) return v;
    const std::size_t stride = (v.size() + cap - 1) / cap;
    std::vector<T> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < v.size(); i += stride) out.push_back(std::move(v[i]));
    return out;
}

/// Consistency residual h(T_next, P) - h(T_cur, P) - flow with its Jacobians
/// with respect to right perturbations of T_cur and T_next.
inline bool consistency_residual_block(const CameraIntrinsics& k, const Mat3& r_cur, const Vec3& t_cur,
                                       const Mat3& r_next, const Vec3& t_next, const ConsistencyPoint& c, Vec2& res,
                                       Mat26* j_cur, Mat26* j_next) {
    Vec2 uc, un;
    if (!project_with_jacobian(k, r_cur, t_cur, c.p_world, uc, j_cur)) return false;
    if (!project_with_jacobian(k, r_next, t_next, c.p_world, un, j_next)) return false;
    res = un - uc - c.flow;
    if (j_cur) *j_cur = -*j_cur;
    return true;
}

struct ResidualSet {
    std::vector<Vec2> residuals;
    std::size_t dropped = 0;
};

inline ResidualSet e_consist(const PoseSE3& t_cur, const PoseSE3& t_next, std::span<const ConsistencyPoint> pts,
                             const CameraIntrinsics& k) {
    ResidualSet out;
    const Mat3 rc = t_cur.rotation_matrix(), rn = t_next.rotation_matrix();
    Vec2 r;
    for (const auto& c : pts) {
        if (consistency_residual_block(k, rc, t_cur.translation(), rn, t_next.translation(), c, r, nullptr, nullptr))
            out.residuals.push_back(r);
        else
            ++out.dropped;
    }
    if (out.residuals.empty()) throw EmptyResidualSet("e_consist: no point is visible under both poses");
    return out;
}

inline ResidualSet e_reproj(const PoseSE3& t, std::span<const Correspondence> corrs, const CameraIntrinsics& k) {
    if (corrs.empty()) throw EmptyResidualSet("e_reproj: no correspondences");
    ResidualSet out;
    const Mat3 r = t.rotation_matrix();
    Vec2 res;
    for (const auto& c : corrs) {
        if (reprojection_residual(k, r, t.translation(), c, res, nullptr))
            out.residuals.push_back(res);
        else
            ++out.dropped;
    }
    if (out.residuals.empty()) throw EmptyResidualSet("e_reproj: every point is behind the camera");
    return out;
}

struct JointResult {
    PoseSE3 t_cur_star;
    PoseSE3 t_next_star;
    double initial_energy = 0.0;
    double final_energy = 0.0;
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;
    double gradient_inf_norm = 0.0;
    std::vector<LmIteration> trace;
};

namespace detail {

struct PosePair {
    PoseSE3 cur;
    PoseSE3 next;
};

struct JointProblem {
    static constexpr int kDim = 12;
    using State = PosePair;
    using MatD = Eigen::Matrix<double, 12, 12>;
    using VecD = Eigen::Matrix<double, 12, 1>;

    std::span<const Correspondence> corrs_cur;
    std::span<const Correspondence> corrs_next;
    std::span<const ConsistencyPoint> pts;
    const CameraIntrinsics* k;
    EnergyConfig cfg;
    Huber huber;

    // Blocks that leave the camera's front half-space pay the cost of a
    // residual of 1e4 px so the energy stays comparable between states.
    double invisible_cost() const { return huber.cost(1e8); }

    template <bool WithDerivatives>
    double evaluate(const State& s, MatD* h, VecD* g) const {
        const Mat3 rc = s.cur.rotation_matrix(), rn = s.next.rotation_matrix();
        const Vec3 &tc = s.cur.translation(), &tn = s.next.translation();
        double e = 0.0;
        Vec2 r;
        Mat26 ja, jb;
        if (cfg.w_reproj > 0.0) {
            for (int frame = 0; frame < 2; ++frame) {
                const auto& corrs = frame == 0 ? corrs_cur : corrs_next;
                const Mat3& rot = frame == 0 ? rc : rn;
                const Vec3& tr = frame == 0 ? tc : tn;
                for (const auto& c : corrs) {
                    const double w0 = cfg.w_reproj * c.weight;
                    if (!reprojection_residual(*k, rot, tr, c, r, WithDerivatives ? &ja : nullptr)) {
                        e += w0 * invisible_cost();
                        continue;
                    }
                    const double sq = r.squaredNorm();
                    e += w0 * huber.cost(sq);
                    if constexpr (WithDerivatives) {
                        const double w = w0 * huber.weight(sq);
                        const int o = 6 * frame;
                        h->template block<6, 6>(o, o).noalias() += w * ja.transpose() * ja;
                        g->template segment<6>(o).noalias() += w * ja.transpose() * r;
                    }
                }
            }
        }
        if (cfg.w_consist > 0.0) {
            for (const auto& c : pts) {
                if (!consistency_residual_block(*k, rc, tc, rn, tn, c, r, WithDerivatives ? &ja : nullptr,
                                                WithDerivatives ? &jb : nullptr)) {
                    e += cfg.w_consist * invisible_cost();
                    continue;
                }
                const double sq = r.squaredNorm();
                e += cfg.w_consist * huber.cost(sq);
                if constexpr (WithDerivatives) {
                    const double w = cfg.w_consist * huber.weight(sq);
                    h->template block<6, 6>(0, 0).noalias() += w * ja.transpose() * ja;
                    h->template block<6, 6>(0, 6).noalias() += w * ja.transpose() * jb;
                    h->template block<6, 6>(6, 6).noalias() += w * jb.transpose() * jb;
                    g->template segment<6>(0).noalias() += w * ja.transpose() * r;
                    g->template segment<6>(6).noalias() += w * jb.transpose() * r;
                }
            }
        }
        if constexpr (WithDerivatives) h->template block<6, 6>(6, 0) = h->template block<6, 6>(0, 6).transpose();
        return e;
    }

    double energy(const State& s) const { return evaluate<false>(s, nullptr, nullptr); }
    double linearize(const State& s, MatD& h, VecD& g) const {
        h.setZero();
        g.setZero();
        return evaluate<true>(s, &h, &g);
    }
    State retract(const State& s, const VecD& d) const {
        return {s.cur * se3_exp(d.head<6>()), s.next * se3_exp(d.tail<6>())};
    }
};

}  // namespace detail

/// Energy minimized by optimize_pair, evaluated at a given pose pair.
inline double joint_energy(const PoseSE3& t_cur, const PoseSE3& t_next, std::span<const Correspondence> corrs_cur,
                           std::span<const Correspondence> corrs_next, std::span<const ConsistencyPoint> pts,
                           const CameraIntrinsics& k, const EnergyConfig& cfg = {}) {
    const detail::JointProblem prob{corrs_cur, corrs_next, pts, &k, cfg, Huber{cfg.huber_delta}};
    return prob.energy({t_cur, t_next});
}

/// Levenberg-Marquardt over the stacked 12-dim perturbation of (T_cur, T_next)
/// minimizing
///   w_consist * sum rho(|E_consist|^2) + w_reproj * sum rho(|E_reproj|^2)
/// with the Huber kernel rho. One correspondence set may be empty (a frame
/// whose PnP failed); the consistency term then ties that pose to the other.
/// A rank-deficient normal matrix at the start returns the inputs unchanged
/// with converged = false.
inline JointResult optimize_pair(const PoseSE3& t_cur0, const PoseSE3& t_next0,
                                 std::span<const Correspondence> corrs_cur,
                                 std::span<const Correspondence> corrs_next,
                                 std::span<const ConsistencyPoint> pts, const CameraIntrinsics& k,
                                 const EnergyConfig& cfg = {}) {
    cfg.validate();
    const detail::JointProblem prob{corrs_cur, corrs_next, pts, &k, cfg, Huber{cfg.huber_delta}};
    detail::PosePair state{t_cur0, t_next0};
    LmOptions lm;
    lm.max_iters = cfg.max_iters;
    lm.rel_tol = cfg.rel_tol;
    lm.lambda0 = cfg.lambda0;
    const auto out = levenberg_marquardt(prob, state, lm, true);

    JointResult res;
    res.t_cur_star = state.cur;
    res.t_next_star = state.next;
    res.initial_energy = out.initial_energy;
    res.final_energy = out.final_energy;
    res.iterations = out.iterations;
    res.converged = out.status == LmStatus::kConverged;
    res.degenerate = out.status == LmStatus::kDegenerate;
    res.gradient_inf_norm = out.gradient.cwiseAbs().maxCoeff();
    res.trace = out.trace;
    return res;
}

/// Convenience form taking raw points and the flow field; the flow is
/// sampled at the T_cur0 projections.
inline JointResult optimize_pair(const PoseSE3& t_cur0, const PoseSE3& t_next0,
                                 std::span<const Correspondence> corrs_cur,
                                 std::span<const Correspondence> corrs_next, std::span<const Vec3> consist_pts,
                                 const FlowField& f_c2n, const CameraIntrinsics& k, const EnergyConfig& cfg = {}) {
    const auto pts = sample_consistency_points(consist_pts, k, t_cur0, f_c2n);
    return optimize_pair(t_cur0, t_next0, corrs_cur, corrs_next, pts, k, cfg);
}

}  // namespace mvtrack
