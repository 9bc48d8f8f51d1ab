#pragma once

// Small dense Levenberg-Marquardt driver shared by the single-pose refinement
// and the two-frame joint optimizer.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

namespace mvtrack {

/// Huber loss on the squared norm s = |r|^2 of a residual block.
struct Huber {
    double delta = 2.0;

    double cost(double sq_norm) const {
        const double r = std::sqrt(sq_norm);
        return r <= delta ? sq_norm : 2.0 * delta * r - delta * delta;
    }
    /// IRLS weight, d cost / d sq_norm.
    double weight(double sq_norm) const {
        const double r = std::sqrt(sq_norm);
        return r <= delta ? 1.0 : delta / r;
    }
};

struct LmOptions {
    int max_iters = 50;
    double rel_tol = 1e-6;
    double lambda0 = 1e-4;
    double lambda_up = 10.0;
    double lambda_down = 2.0;
    double lambda_max = 1e12;
    /// Smallest eigenvalue of the Jacobi-scaled normal matrix below which the
    /// problem is reported degenerate.
    double rank_tol = 1e-10;
};

struct LmIteration {
    int iteration = 0;
    double energy = 0.0;  // energy after the trial step
    double lambda = 0.0;
    bool accepted = false;
};

enum class LmStatus { kConverged, kMaxIterations, kDegenerate };

template <int Dim>
struct LmOutcome {
    LmStatus status = LmStatus::kMaxIterations;
    double initial_energy = 0.0;
    double final_energy = 0.0;
    int iterations = 0;
    Eigen::Matrix<double, Dim, 1> gradient = Eigen::Matrix<double, Dim, 1>::Zero();
    std::vector<LmIteration> trace;
};

/// True when the Jacobi-scaled normal matrix has a (near) null direction.
template <int Dim>
bool normal_matrix_degenerate(const Eigen::Matrix<double, Dim, Dim>& h, double tol) {
    Eigen::Matrix<double, Dim, 1> d = h.diagonal();
    for (int i = 0; i < Dim; ++i) {
        if (!(d[i] > 0.0)) return true;
        d[i] = 1.0 / std::sqrt(d[i]);
    }
    const Eigen::Matrix<double, Dim, Dim> scaled = d.asDiagonal() * h * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, Dim, Dim>> es(scaled, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[0] < tol;
}

/// Minimizes a robust sum of squares over a manifold state.
///
/// Problem must provide:
///   static constexpr int kDim;
///   using State;
///   double linearize(const State&, Matrix<kDim,kDim>& H, Matrix<kDim,1>& g) const;  // returns energy
///   double energy(const State&) const;
///   State retract(const State&, const Matrix<kDim,1>& delta) const;
///
/// Only steps that lower the energy are accepted, so the accepted energies
/// form a non-increasing sequence.
template <class Problem>
LmOutcome<Problem::kDim> levenberg_marquardt(const Problem& problem, typename Problem::State& state,
                                             const LmOptions& opts, bool check_rank = true) {
    constexpr int D = Problem::kDim;
    using MatD = Eigen::Matrix<double, D, D>;
    using VecD = Eigen::Matrix<double, D, 1>;
    LmOutcome<D> out;
    MatD h;
    VecD g;
    double energy = problem.linearize(state, h, g);
    out.initial_energy = out.final_energy = energy;
    out.gradient = g;
    if (check_rank && normal_matrix_degenerate<D>(h, opts.rank_tol)) {
        out.status = LmStatus::kDegenerate;
        return out;
    }
    if (!(energy > 1e-24)) {
        out.status = LmStatus::kConverged;
        return out;
    }
    double lambda = opts.lambda0;
    for (int it = 1; it <= opts.max_iters; ++it) {
        out.iterations = it;
        MatD a = h;
        a.diagonal() += lambda * h.diagonal();
        const VecD delta = a.ldlt().solve(-g);
        if (!delta.allFinite()) {
            lambda *= opts.lambda_up;
            out.trace.push_back({it, energy, lambda, false});
            if (lambda > opts.lambda_max) break;
            continue;
        }
        typename Problem::State trial = problem.retract(state, delta);
        const double e_trial = problem.energy(trial);
        if (e_trial < energy) {
            const double decrease = (energy - e_trial) / energy;
            state = trial;
            energy = e_trial;
            out.trace.push_back({it, energy, lambda, true});
            lambda = std::max(lambda / opts.lambda_down, 1e-15);
            problem.linearize(state, h, g);
            if (decrease < opts.rel_tol || energy <= 1e-24) {
                out.status = LmStatus::kConverged;
                break;
            }
        } else {
            out.trace.push_back({it, e_trial, lambda, false});
            lambda *= opts.lambda_up;
            if (lambda > opts.lambda_max) {
                // No descent direction left at any damping: stationary point.
                out.status = LmStatus::kConverged;
                break;
            }
        }
    }
    out.final_energy = energy;
    out.gradient = g;
    return out;
}

}  // namespace mvtrack
