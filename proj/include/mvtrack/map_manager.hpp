#pragma once

#include "mvtrack/core_geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace mvtrack {

/// World-frame point set. `ids` is either empty (the index is the id) or
/// parallel to `points`.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<std::int64_t> ids;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    std::int64_t id(std::size_t i) const { return ids.empty() ? static_cast<std::int64_t>(i) : ids[i]; }
};

struct CropExtents {
    double forward = 100.0;
    double backward = 10.0;
    double lateral = 25.0;

    void validate() const {
        if (!(forward > 0.0) || !(backward > 0.0) || !(lateral > 0.0))
            throw std::invalid_argument("crop extents must be positive");
    }
    double max_dimension() const { return std::max({forward, backward, lateral}); }
};

/// Index cell size used when none is given: largest crop dimension / 32.
inline double default_index_cell(const CropExtents& extents = {}) { return extents.max_dimension() / 32.0; }

namespace detail {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
    auto operator<=>(const CellKey&) const = default;
};

struct CellKeyHash {
    std::size_t operator()(const CellKey& k) const {
        std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
        h ^= static_cast<std::uint64_t>(k.y) + 0x7F4A7C159E3779B9ULL + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint64_t>(k.z) + 0x94D049BB133111EBULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

inline CellKey cell_of(const Vec3& p, double size) {
    return {static_cast<std::int64_t>(std::floor(p.x() / size)), static_cast<std::int64_t>(std::floor(p.y() / size)),
            static_cast<std::int64_t>(std::floor(p.z() / size))};
}

}  // namespace detail

/// Horizontal crop frame of a camera: origin at the camera center, forward
/// along the optical axis projected on the ground plane (world z is up).
struct CropFrame {
    Vec3 origin;
    Vec2 forward;
    Vec2 left;

    static CropFrame of(const PoseSE3& cam_from_world) {
        const Mat3 r_wc = cam_from_world.rotation_matrix().transpose();
        Vec2 f(r_wc(0, 2), r_wc(1, 2));
        if (f.norm() < 1e-9) {
            // Looking straight up or down: fall back to the image "up" direction.
            f = Vec2(-r_wc(0, 1), -r_wc(1, 1));
        }
        f.normalize();
        return {cam_from_world.center(), f, Vec2(-f.y(), f.x())};
    }

    bool contains(const Vec3& p, const CropExtents& e) const {
        const Vec2 d(p.x() - origin.x(), p.y() - origin.y());
        const double fwd = d.dot(forward);
        const double lat = d.dot(left);
        return fwd >= -e.backward && fwd <= e.forward && std::abs(lat) <= e.lateral;
    }
};

/// Global LiDAR map with a uniform voxel hash over its points. Immutable
/// after construction.
class GlobalMap {
public:
    GlobalMap() : GlobalMap(PointCloud{}) {}

    explicit GlobalMap(PointCloud cloud, double voxel_size = default_index_cell()) : cloud_(std::move(cloud)), voxel_(voxel_size) {
        if (!(voxel_ > 0.0)) throw std::invalid_argument("voxel size must be positive");
        if (!cloud_.ids.empty() && cloud_.ids.size() != cloud_.points.size())
            throw std::invalid_argument("point cloud ids must be parallel to points");
        for (std::size_t i = 0; i < cloud_.points.size(); ++i) {
            const Vec3& p = cloud_.points[i];
            if (!p.allFinite()) throw std::invalid_argument("point cloud contains non-finite coordinates");
            const auto key = detail::cell_of(p, voxel_);
            cells_[key].push_back(static_cast<std::uint32_t>(i));
            zmin_ = std::min(zmin_, key.z);
            zmax_ = std::max(zmax_, key.z);
        }
    }

    const PointCloud& cloud() const { return cloud_; }
    double voxel_size() const { return voxel_; }
    std::size_t size() const { return cloud_.size(); }
    bool empty() const { return cloud_.empty(); }

    /// Points inside the crop box, in map order. Output ids refer to the map
    /// (its own ids, or indices when the map has none).
    PointCloud crop(const PoseSE3& cam_from_world, const CropExtents& extents) const {
        PointCloud out;
        if (cloud_.empty()) return out;
        const CropFrame frame = CropFrame::of(cam_from_world);
        // Horizontal bounding box of the rotated crop rectangle.
        double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
        for (const double a : {-extents.backward, extents.forward}) {
            for (const double b : {-extents.lateral, extents.lateral}) {
                const Vec2 c = Vec2(frame.origin.x(), frame.origin.y()) + a * frame.forward + b * frame.left;
                xmin = std::min(xmin, c.x());
                xmax = std::max(xmax, c.x());
                ymin = std::min(ymin, c.y());
                ymax = std::max(ymax, c.y());
            }
        }
        const auto lo = detail::cell_of(Vec3(xmin, ymin, 0.0), voxel_);
        const auto hi = detail::cell_of(Vec3(xmax, ymax, 0.0), voxel_);
        std::vector<std::uint32_t> hits;
        for (std::int64_t cx = lo.x; cx <= hi.x; ++cx) {
            for (std::int64_t cy = lo.y; cy <= hi.y; ++cy) {
                for (std::int64_t cz = zmin_; cz <= zmax_; ++cz) {
                    const auto it = cells_.find({cx, cy, cz});
                    if (it == cells_.end()) continue;
                    for (const std::uint32_t i : it->second) {
                        if (frame.contains(cloud_.points[i], extents)) hits.push_back(i);
                    }
                }
            }
        }
        std::sort(hits.begin(), hits.end());
        out.points.reserve(hits.size());
        out.ids.reserve(hits.size());
        for (const std::uint32_t i : hits) {
            out.points.push_back(cloud_.points[i]);
            out.ids.push_back(cloud_.id(i));
        }
        return out;
    }

private:
    PointCloud cloud_;
    double voxel_;
    std::unordered_map<detail::CellKey, std::vector<std::uint32_t>, detail::CellKeyHash> cells_;
    std::int64_t zmin_ = INT64_MAX;
    std::int64_t zmax_ = INT64_MIN;
};

/// Transforms sensor-frame scans into the world with their world_from_sensor
/// poses and concatenates them.
inline GlobalMap aggregate_scans(const std::vector<PointCloud>& scans, const std::vector<PoseSE3>& world_from_sensor,
                                 double voxel_size = default_index_cell()) {
    if (scans.size() != world_from_sensor.size())
        throw std::invalid_argument("aggregate_scans: " + std::to_string(scans.size()) + " scans but " +
                                    std::to_string(world_from_sensor.size()) + " poses");
    PointCloud all;
    for (std::size_t s = 0; s < scans.size(); ++s) {
        const Mat3 r = world_from_sensor[s].rotation_matrix();
        const Vec3& t = world_from_sensor[s].translation();
        for (const Vec3& p : scans[s].points) all.points.push_back(r * p + t);
    }
    return GlobalMap(std::move(all), voxel_size);
}

/// Voxel-grid downsample: one centroid per occupied voxel, emitted in voxel
/// key order so the result does not depend on insertion order.
inline GlobalMap downsample(const GlobalMap& map, double resolution) {
    if (!(resolution > 0.0)) throw std::invalid_argument("downsample resolution must be positive");
    std::map<detail::CellKey, std::vector<Vec3>> voxels;
    for (const Vec3& p : map.cloud().points) voxels[detail::cell_of(p, resolution)].push_back(p);
    PointCloud out;
    out.points.reserve(voxels.size());
    const auto lex = [](const Vec3& a, const Vec3& b) {
        return std::tie(a.x(), a.y(), a.z()) < std::tie(b.x(), b.y(), b.z());
    };
    for (auto& [key, members] : voxels) {
        // Summation order fixed by sorting, so the centroid is bit-stable.
        std::sort(members.begin(), members.end(), lex);
        Vec3 sum = Vec3::Zero();
        for (const Vec3& p : members) sum += p;
        out.points.push_back(sum / static_cast<double>(members.size()));
    }
    return GlobalMap(std::move(out), map.voxel_size());
}

inline PointCloud crop_local(const GlobalMap& map, const PoseSE3& cam_from_world, const CropExtents& extents) {
    return map.crop(cam_from_world, extents);
}

}  // namespace mvtrack
