#pragma once

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/depth_render.hpp"
#include "mvtrack/map_manager.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace mvtrack {

class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class EmptyMaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Current image <-> depth map, next image <-> depth map, current -> next image.
struct FlowTriplet {
    FlowField f_c2d;
    FlowField f_n2d;
    FlowField f_c2n;
};

struct FlowNoiseModel {
    double gaussian_sigma = 0.0;     // px, per axis
    double outlier_fraction = 0.0;   // [0, 1]
    double outlier_magnitude = 50.0; // px
    double dropout_fraction = 0.0;   // [0, 1]
    std::uint64_t seed = 0;

    void validate() const {
        if (!(gaussian_sigma >= 0.0) || !(outlier_magnitude >= 0.0))
            throw std::invalid_argument("noise: sigma and outlier magnitude must be non-negative");
        if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0) || !(dropout_fraction >= 0.0 && dropout_fraction <= 1.0))
            throw std::invalid_argument("noise: fractions must lie in [0, 1]");
    }
    bool noiseless() const { return gaussian_sigma == 0.0 && outlier_fraction == 0.0 && dropout_fraction == 0.0; }
};

namespace detail {

inline void require_same_shape(const FlowField& a, const FlowField& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionMismatch(std::string(what) + ": " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
}

}  // namespace detail

/// Bilinear sample of a flow field at a sub-pixel position. Corners with zero
/// weight are ignored; any contributing invalid corner rejects the sample.
inline std::optional<Vec2> sample_bilinear(const FlowField& field, double x, double y) {
    if (!(x >= 0.0) || !(y >= 0.0) || x > field.width - 1 || y > field.height - 1) return std::nullopt;
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double ax = x - x0;
    const double ay = y - y0;
    const std::array<int, 2> xs{x0, std::min(x0 + 1, field.width - 1)};
    const std::array<int, 2> ys{y0, std::min(y0 + 1, field.height - 1)};
    const std::array<double, 2> wx{1.0 - ax, ax};
    const std::array<double, 2> wy{1.0 - ay, ay};
    Vec2 acc = Vec2::Zero();
    for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
            const double w = wx[i] * wy[j];
            if (w == 0.0) continue;
            const std::size_t idx = field.index(xs[i], ys[j]);
            if (!field.valid[idx]) return std::nullopt;
            acc += w * field.at(idx);
        }
    }
    return acc;
}

/// Backward warp: out(p) = field(p + base(p)), bilinearly interpolated.
inline FlowField warp(const FlowField& field, const FlowField& base) {
    detail::require_same_shape(field, base, "warp");
    FlowField out(base.width, base.height);
    for (int v = 0; v < base.height; ++v) {
        for (int u = 0; u < base.width; ++u) {
            const std::size_t i = base.index(u, v);
            if (!base.valid[i]) continue;
            if (const auto s = sample_bilinear(field, u + base.du[i], v + base.dv[i])) out.set(i, *s);
        }
    }
    return out;
}

/// Pointwise a - b on the jointly valid mask.
inline FlowField subtract(const FlowField& a, const FlowField& b) {
    detail::require_same_shape(a, b, "subtract");
    FlowField out(a.width, a.height);
    for (std::size_t i = 0; i < a.valid.size(); ++i) {
        if (a.valid[i] && b.valid[i]) out.set(i, a.at(i) - b.at(i));
    }
    return out;
}

inline FlowField add_constant(const FlowField& a, const Vec2& c) {
    FlowField out = a;
    for (std::size_t i = 0; i < a.valid.size(); ++i) {
        if (a.valid[i]) out.set(i, a.at(i) + c);
    }
    return out;
}

/// Cross-modal consistency residual on the depth-map grid:
///   (f_n2d - f_c2d)(p) - f_c2n(p + f_c2d(p)).
/// The difference of the two image-to-depth flows is the image motion of the
/// point behind pixel p; the optical flow is read at that point's position in
/// the current image, which is where f_c2d carries p.
inline FlowField consistency_residual(const FlowTriplet& t) {
    detail::require_same_shape(t.f_c2d, t.f_n2d, "consistency_residual");
    detail::require_same_shape(t.f_c2d, t.f_c2n, "consistency_residual");
    return subtract(subtract(t.f_n2d, t.f_c2d), warp(t.f_c2n, t.f_c2d));
}

/// Masked average endpoint error. The mask is every pixel where the ground
/// truth has a flow sample (and the prediction is defined).
inline double epe(const FlowField& f_pre, const FlowField& f_gt) {
    detail::require_same_shape(f_pre, f_gt, "epe");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < f_gt.valid.size(); ++i) {
        if (!f_gt.valid[i] || !f_pre.valid[i]) continue;
        sum += (f_pre.at(i) - f_gt.at(i)).norm();
        ++n;
    }
    if (n == 0) throw EmptyMaskError("epe: empty mask");
    return sum / static_cast<double>(n);
}

/// Mean l2 norm of a residual field over its valid mask.
inline double mean_norm(const FlowField& r) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < r.valid.size(); ++i) {
        if (!r.valid[i]) continue;
        sum += r.at(i).norm();
        ++n;
    }
    if (n == 0) throw EmptyMaskError("consistency residual: empty mask");
    return sum / static_cast<double>(n);
}

inline double max_abs(const FlowField& r) {
    double m = 0.0;
    for (std::size_t i = 0; i < r.valid.size(); ++i) {
        if (r.valid[i]) m = std::max({m, std::abs(static_cast<double>(r.du[i])), std::abs(static_cast<double>(r.dv[i]))});
    }
    return m;
}

inline double total_loss(const FlowField& f_c2d_pre, const FlowField& f_c2d_gt, const FlowField& f_n2d_pre,
                         const FlowField& f_n2d_gt, const FlowTriplet& t) {
    return epe(f_c2d_pre, f_c2d_gt) + epe(f_n2d_pre, f_n2d_gt) + mean_norm(consistency_residual(t));
}

/// Applies noise in scan order: dropout, then outliers (a random-direction
/// offset of fixed magnitude), then per-axis Gaussian noise.
inline void apply_noise(FlowField& f, const FlowNoiseModel& m, std::uint64_t stream) {
    if (m.noiseless()) return;
    std::seed_seq seq{static_cast<std::uint32_t>(m.seed), static_cast<std::uint32_t>(m.seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < f.valid.size(); ++i) {
        if (!f.valid[i]) continue;
        if (m.dropout_fraction > 0.0 && unit(rng) < m.dropout_fraction) {
            f.valid[i] = 0;
            continue;
        }
        Vec2 x = f.at(i);
        if (m.outlier_fraction > 0.0 && unit(rng) < m.outlier_fraction) {
            const double a = 2.0 * kPi * unit(rng);
            x += m.outlier_magnitude * Vec2(std::cos(a), std::sin(a));
        } else if (m.gaussian_sigma > 0.0) {
            x += m.gaussian_sigma * Vec2(gauss(rng), gauss(rng));
        }
        f.set(i, x);
    }
}

struct InducedFlowOptions {
    /// Each point covers the 4x4 pixel block around its sub-pixel projection,
    /// so any bilinear sample within one pixel of it reads only that point.
    int footprint = 4;
    /// Pixels covered by points whose flows disagree by more than this (px,
    /// per axis) are ambiguous and left invalid.
    double ambiguity_tolerance = 0.25;
};

/// Image motion induced between two camera poses by the points visible in
/// both, rasterized on the first camera's image grid.
inline FlowField induced_image_flow(const PointCloud& cloud, const CameraIntrinsics& k, const PoseSE3& t_a,
                                    const PoseSE3& t_b, const InducedFlowOptions& opts = {}) {
    const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
    FlowField f(k.width, k.height);
    // Scratch buffers are read only where `hit` is set, so they stay uninitialized.
    const auto zbuf = std::make_unique_for_overwrite<float[]>(n);
    const auto lo_u = std::make_unique_for_overwrite<float[]>(n);
    const auto hi_u = std::make_unique_for_overwrite<float[]>(n);
    const auto lo_v = std::make_unique_for_overwrite<float[]>(n);
    const auto hi_v = std::make_unique_for_overwrite<float[]>(n);
    std::vector<std::uint8_t> hit(n, 0);
    std::vector<std::uint32_t> touched;
    const Mat3 ra = t_a.rotation_matrix(), rb = t_b.rotation_matrix();
    const Vec3 &ta = t_a.translation(), &tb = t_b.translation();
    const int lo_off = -(opts.footprint / 2 - 1);
    const int hi_off = opts.footprint / 2;
    for (const Vec3& p : cloud.points) {
        const Vec3 a = ra * p + ta;
        const Vec3 b = rb * p + tb;
        if (!(a.z() > 0.0) || !(b.z() > 0.0)) continue;
        const double ua = k.fx * a.x() / a.z() + k.cx, va = k.fy * a.y() / a.z() + k.cy;
        const double ub = k.fx * b.x() / b.z() + k.cx, vb = k.fy * b.y() / b.z() + k.cy;
        if (!k.pixel_of(ua, va) || !k.pixel_of(ub, vb)) continue;
        const float fu = static_cast<float>(ub - ua), fv = static_cast<float>(vb - va);
        const int bu = static_cast<int>(std::floor(ua)), bv = static_cast<int>(std::floor(va));
        for (int y = bv + lo_off; y <= bv + hi_off; ++y) {
            if (y < 0 || y >= k.height) continue;
            for (int x = bu + lo_off; x <= bu + hi_off; ++x) {
                if (x < 0 || x >= k.width) continue;
                const std::size_t i = f.index(x, y);
                const float z = static_cast<float>(a.z());
                if (!hit[i]) {
                    hit[i] = 1;
                    touched.push_back(static_cast<std::uint32_t>(i));
                    lo_u[i] = hi_u[i] = fu;
                    lo_v[i] = hi_v[i] = fv;
                    zbuf[i] = z;
                    f.du[i] = fu;
                    f.dv[i] = fv;
                    continue;
                }
                lo_u[i] = std::min(lo_u[i], fu);
                hi_u[i] = std::max(hi_u[i], fu);
                lo_v[i] = std::min(lo_v[i], fv);
                hi_v[i] = std::max(hi_v[i], fv);
                if (z < zbuf[i]) {
                    zbuf[i] = z;
                    f.du[i] = fu;
                    f.dv[i] = fv;
                }
            }
        }
    }
    const float tol = static_cast<float>(opts.ambiguity_tolerance);
    for (const std::uint32_t i : touched) {
        f.valid[i] = (hi_u[i] - lo_u[i]) <= tol && (hi_v[i] - lo_v[i]) <= tol;
        if (!f.valid[i]) f.du[i] = f.dv[i] = 0.0f;
    }
    return f;
}

/// Per-branch noise for the synthetic flow provider.
struct BranchNoise {
    FlowNoiseModel c2d;
    FlowNoiseModel n2d;
    FlowNoiseModel c2n;
};

namespace detail {

inline constexpr std::uint64_t kStreamC2D = 0x63326400;
inline constexpr std::uint64_t kStreamN2D = 0x6E326400;
inline constexpr std::uint64_t kStreamC2N = 0x63326E00;

/// Targets that leave the image carry no usable image content.
inline void mask_out_of_image(FlowField& f, const CameraIntrinsics& k) {
    for (int v = 0; v < f.height; ++v) {
        for (int u = 0; u < f.width; ++u) {
            const std::size_t i = f.index(u, v);
            if (f.valid[i] && !k.pixel_of(u + f.du[i], v + f.dv[i])) f.valid[i] = 0;
        }
    }
}

}  // namespace detail

/// Synthetic stand-in for the hybrid flow network. Depth flows are derived
/// from `depth` (rendered at T_init from `cloud`); the optical flow is the
/// exact point-induced flow between the two ground-truth poses. `stream`
/// decorrelates noise draws between calls sharing a model seed.
inline FlowTriplet oracle_flows(const DepthMap& depth, const PointCloud& cloud, const PoseSE3& t_init,
                                const PoseSE3& t_gt_cur, const PoseSE3& t_gt_next, const BranchNoise& noise,
                                std::uint64_t stream = 0) {
    FlowTriplet t;
    t.f_c2d = depth_flow(depth, cloud, t_init, t_gt_cur);
    t.f_n2d = depth_flow(depth, cloud, t_init, t_gt_next);
    detail::mask_out_of_image(t.f_c2d, depth.camera);
    detail::mask_out_of_image(t.f_n2d, depth.camera);
    t.f_c2n = induced_image_flow(cloud, depth.camera, t_gt_cur, t_gt_next);
    apply_noise(t.f_c2d, noise.c2d, stream * 4 + detail::kStreamC2D);
    apply_noise(t.f_n2d, noise.n2d, stream * 4 + detail::kStreamN2D);
    apply_noise(t.f_c2n, noise.c2n, stream * 4 + detail::kStreamC2N);
    return t;
}

inline FlowTriplet oracle_flows(const PointCloud& cloud, const CameraIntrinsics& k, const PoseSE3& t_init,
                                const PoseSE3& t_gt_cur, const PoseSE3& t_gt_next, const FlowNoiseModel& noise,
                                const OcclusionOptions& occ = {}) {
    const DepthMap d = remove_occlusions(render_depth(cloud, k, t_init), occ);
    return oracle_flows(d, cloud, t_init, t_gt_cur, t_gt_next, BranchNoise{noise, noise, noise});
}

}  // namespace mvtrack
