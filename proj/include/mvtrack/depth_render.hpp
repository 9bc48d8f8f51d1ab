#pragma once

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/map_manager.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mvtrack {

/// Synthetic depth image. `source` holds the index of the winning point in
/// the cloud the map was rendered from; it is meaningful only where valid.
struct DepthMap {
    CameraIntrinsics camera;
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;
    std::vector<std::int32_t> source;

    DepthMap() = default;
    explicit DepthMap(const CameraIntrinsics& k)
        : camera(k), width(k.width), height(k.height),
          depth(static_cast<std::size_t>(k.width) * k.height, 0.0),
          valid(static_cast<std::size_t>(k.width) * k.height, 0),
          source(static_cast<std::size_t>(k.width) * k.height, -1) {}

    std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
    std::size_t valid_count() const {
        std::size_t n = 0;
        for (const auto b : valid) n += b;
        return n;
    }
};

/// Per-pixel 2D displacement with a validity mask.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> du;
    std::vector<float> dv;
    std::vector<std::uint8_t> valid;

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), du(static_cast<std::size_t>(w) * h, 0.0f), dv(static_cast<std::size_t>(w) * h, 0.0f),
          valid(static_cast<std::size_t>(w) * h, 0) {}

    std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
    Vec2 at(std::size_t i) const { return {du[i], dv[i]}; }
    void set(std::size_t i, const Vec2& f) {
        du[i] = static_cast<float>(f.x());
        dv[i] = static_cast<float>(f.y());
        valid[i] = 1;
    }
    bool same_shape(const FlowField& o) const { return width == o.width && height == o.height; }
    std::size_t valid_count() const {
        std::size_t n = 0;
        for (const auto b : valid) n += b;
        return n;
    }
};

/// Z-buffer rasterization to the nearest pixel. Equal depths (within 1e-9)
/// resolve to the smaller point id.
inline DepthMap render_depth(const PointCloud& cloud, const CameraIntrinsics& k, const PoseSE3& cam_from_world) {
    DepthMap d(k);
    const Mat3 r = cam_from_world.rotation_matrix();
    const Vec3& t = cam_from_world.translation();
    constexpr double kTie = 1e-9;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 pc = r * cloud.points[i] + t;
        if (!(pc.z() > 0.0)) continue;
        const auto px = k.pixel_of(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
        if (!px) continue;
        const std::size_t idx = d.index(px->first, px->second);
        const double z = pc.z();
        bool take = !d.valid[idx];
        if (!take) {
            const double cur = d.depth[idx];
            if (z < cur - kTie)
                take = true;
            else if (std::abs(z - cur) <= kTie && cloud.id(i) < cloud.id(static_cast<std::size_t>(d.source[idx])))
                take = true;
        }
        if (take) {
            d.depth[idx] = z;
            d.valid[idx] = 1;
            d.source[idx] = static_cast<std::int32_t>(i);
        }
    }
    return d;
}

struct OcclusionOptions {
    double aperture_deg = 10.0;
    int window = 7;
    /// Number of the eight neighbourhood sectors that must contain an
    /// occluder before a pixel is dropped.
    int min_sectors = 6;
};

/// Screen-space visibility test. A nearer neighbour q occludes pixel p when it
/// lies inside the cone of half-angle `aperture` around p's line of sight:
///   (depth_p - depth_q) * tan(aperture) > pixel_distance * depth_q / f.
/// p is dropped when occluders are found in at least `min_sectors` of the
/// eight directions around it. Never adds valid pixels.
inline DepthMap remove_occlusions(const DepthMap& d, const OcclusionOptions& opts = {}) {
    if (opts.window < 3 || opts.window % 2 == 0) throw std::invalid_argument("occlusion window must be odd and >= 3");
    if (opts.min_sectors < 1 || opts.min_sectors > 8) throw std::invalid_argument("min_sectors must be in [1, 8]");
    DepthMap out = d;
    if (!(opts.aperture_deg > 0.0)) return out;
    const double tan_ap = std::tan(deg2rad(std::min(opts.aperture_deg, 89.999)));
    const double focal = 0.5 * (d.camera.fx + d.camera.fy);
    const int half = opts.window / 2;

    struct Offset {
        int du, dv;
        double dist;
        int sector;
    };
    std::vector<Offset> offsets;
    for (int dv = -half; dv <= half; ++dv) {
        for (int du = -half; du <= half; ++du) {
            if (du == 0 && dv == 0) continue;
            const double ang = std::atan2(static_cast<double>(dv), static_cast<double>(du));
            int sector = static_cast<int>(std::floor((ang + kPi / 8.0) / (kPi / 4.0)));
            sector = ((sector % 8) + 8) % 8;
            offsets.push_back({du, dv, std::hypot(du, dv), sector});
        }
    }
    for (int v = 0; v < d.height; ++v) {
        for (int u = 0; u < d.width; ++u) {
            const std::size_t i = d.index(u, v);
            if (!d.valid[i]) continue;
            const double dp = d.depth[i];
            unsigned mask = 0;
            for (const Offset& o : offsets) {
                const int qu = u + o.du, qv = v + o.dv;
                if (qu < 0 || qv < 0 || qu >= d.width || qv >= d.height) continue;
                const std::size_t j = d.index(qu, qv);
                if (!d.valid[j]) continue;
                const double dq = d.depth[j];
                if (!(dq < dp)) continue;
                if ((dp - dq) * tan_ap > o.dist * dq / focal) mask |= 1u << o.sector;
            }
            if (std::popcount(mask) >= opts.min_sectors) {
                out.valid[i] = 0;
                out.source[i] = -1;
                out.depth[i] = 0.0;
            }
        }
    }
    return out;
}

inline DepthMap remove_occlusions(const DepthMap& d, double cone_aperture_deg) {
    OcclusionOptions o;
    o.aperture_deg = cone_aperture_deg;
    return remove_occlusions(d, o);
}

/// Image-to-depth flow of an already rendered depth map: for each valid pixel
/// the displacement h(P, T_gt) - h(P, T_init) of its source point. Pixels
/// whose point falls behind the camera under T_gt are invalid.
inline FlowField depth_flow(const DepthMap& d, const PointCloud& cloud, const PoseSE3& t_init, const PoseSE3& t_gt) {
    FlowField f(d.width, d.height);
    const Mat3 ri = t_init.rotation_matrix(), rg = t_gt.rotation_matrix();
    const Vec3 &ti = t_init.translation(), &tg = t_gt.translation();
    const CameraIntrinsics& k = d.camera;
    for (std::size_t i = 0; i < d.valid.size(); ++i) {
        if (!d.valid[i]) continue;
        const Vec3& p = cloud.points[static_cast<std::size_t>(d.source[i])];
        const Vec3 a = ri * p + ti;
        const Vec3 b = rg * p + tg;
        if (!(a.z() > 0.0) || !(b.z() > 0.0)) continue;
        const Vec2 xa(k.fx * a.x() / a.z() + k.cx, k.fy * a.y() / a.z() + k.cy);
        const Vec2 xb(k.fx * b.x() / b.z() + k.cx, k.fy * b.y() / b.z() + k.cy);
        f.set(i, xb - xa);
    }
    return f;
}

/// Ground-truth image-to-depth flow: render at T_init, remove occlusions, and
/// displace each surviving pixel to its projection under T_gt.
inline FlowField gt_depth_flow(const PointCloud& cloud, const CameraIntrinsics& k, const PoseSE3& t_init,
                               const PoseSE3& t_gt, const OcclusionOptions& occ = {}) {
    const DepthMap d = remove_occlusions(render_depth(cloud, k, t_init), occ);
    return depth_flow(d, cloud, t_init, t_gt);
}

}  // namespace mvtrack
