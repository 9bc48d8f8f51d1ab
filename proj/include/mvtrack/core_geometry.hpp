#pragma once

// Rigid-body pose algebra, pinhole projection and pose perturbation.
//
// Pose convention: a PoseSE3 used for projection maps world points into the
// camera frame (cam_from_world). Trajectories store the inverse
// (world_from_cam), matching the KITTI odometry files.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

namespace mvtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat26 = Eigen::Matrix<double, 2, 6>;

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Thrown when a point with non-positive depth is projected.
class BehindCameraError : public std::domain_error {
public:
    explicit BehindCameraError(double z)
        : std::domain_error("point behind camera (z = " + std::to_string(z) + ")"), z_(z) {}
    double z() const { return z_; }

private:
    double z_;
};

struct PixelCoord {
    double u = 0.0;
    double v = 0.0;

    Vec2 vec() const { return {u, v}; }
};

struct CameraIntrinsics {
    double fx = 718.0;
    double fy = 718.0;
    double cx = 480.0;
    double cy = 160.0;
    int width = 960;
    int height = 320;

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw std::invalid_argument("camera: fx and fy must be positive");
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("camera: width and height must be positive");
        if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
            throw std::invalid_argument("camera: principal point must lie inside the image");
    }

    /// Nearest pixel index of a sub-pixel coordinate, or nullopt when outside.
    std::optional<std::pair<int, int>> pixel_of(double u, double v) const {
        const double iu = std::floor(u + 0.5);
        const double iv = std::floor(v + 0.5);
        if (iu < 0.0 || iv < 0.0 || iu >= width || iv >= height) return std::nullopt;
        return std::make_pair(static_cast<int>(iu), static_cast<int>(iv));
    }
};

/// Rigid transform stored as a unit quaternion and a translation.
class PoseSE3 {
public:
    PoseSE3() : q_(Eigen::Quaterniond::Identity()), t_(Vec3::Zero()) {}
    PoseSE3(const Eigen::Quaterniond& q, const Vec3& t) : q_(q.normalized()), t_(t) {}
    PoseSE3(const Mat3& rotation, const Vec3& t) : q_(Eigen::Quaterniond(rotation).normalized()), t_(t) {}

    static PoseSE3 identity() { return {}; }
    static PoseSE3 translation_only(const Vec3& t) { return {Eigen::Quaterniond::Identity(), t}; }

    /// Row-major [R|t] as found in KITTI pose files. The rotation block is
    /// re-orthonormalized through the quaternion conversion.
    static PoseSE3 from_matrix3x4(const Eigen::Matrix<double, 3, 4>& m) {
        Eigen::JacobiSVD<Mat3> svd(m.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 r = svd.matrixU() * svd.matrixV().transpose();
        if (r.determinant() < 0.0) {
            Mat3 u = svd.matrixU();
            u.col(2) *= -1.0;
            r = u * svd.matrixV().transpose();
        }
        return {r, m.col(3)};
    }

    const Eigen::Quaterniond& rotation() const { return q_; }
    Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
    const Vec3& translation() const { return t_; }

    Eigen::Matrix<double, 3, 4> matrix3x4() const {
        Eigen::Matrix<double, 3, 4> m;
        m.leftCols<3>() = rotation_matrix();
        m.col(3) = t_;
        return m;
    }

    Vec3 operator*(const Vec3& p) const { return q_ * p + t_; }
    PoseSE3 operator*(const PoseSE3& other) const { return {q_ * other.q_, q_ * other.t_ + t_}; }

    PoseSE3 inverse() const {
        const Eigen::Quaterniond qi = q_.conjugate();
        return {qi, -(qi * t_)};
    }

    /// Camera center in world coordinates when this pose is cam_from_world.
    Vec3 center() const { return -(q_.conjugate() * t_); }

private:
    Eigen::Quaterniond q_;
    Vec3 t_;
};

inline PoseSE3 pose_compose(const PoseSE3& a, const PoseSE3& b) { return a * b; }
inline PoseSE3 pose_inverse(const PoseSE3& a) { return a.inverse(); }

inline Mat3 skew(const Vec3& w) {
    Mat3 s;
    s << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return s;
}

inline PixelCoord project_point(const CameraIntrinsics& k, const Vec3& p_cam) {
    if (!(p_cam.z() > 0.0)) throw BehindCameraError(p_cam.z());
    return {k.fx * p_cam.x() / p_cam.z() + k.cx, k.fy * p_cam.y() / p_cam.z() + k.cy};
}

inline Vec3 transform_point(const PoseSE3& cam_from_world, const Vec3& p_world) { return cam_from_world * p_world; }

/// Projection of a world point through cam_from_world and K.
inline PixelCoord h_project(const CameraIntrinsics& k, const PoseSE3& cam_from_world, const Vec3& p_world) {
    return project_point(k, transform_point(cam_from_world, p_world));
}

inline std::optional<PixelCoord> try_h_project(const CameraIntrinsics& k, const PoseSE3& cam_from_world,
                                               const Vec3& p_world) {
    const Vec3 pc = cam_from_world * p_world;
    if (!(pc.z() > 0.0)) return std::nullopt;
    return PixelCoord{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
}

/// Projects p_world and returns the 2x6 Jacobian of the pixel with respect to
/// a right-multiplicative perturbation T * exp(xi), xi = (omega, v).
/// Returns false when the point is not in front of the camera.
inline bool project_with_jacobian(const CameraIntrinsics& k, const Mat3& r, const Vec3& t, const Vec3& p_world,
                                  Vec2& uv, Mat26* jac) {
    const Vec3 pc = r * p_world + t;
    if (!(pc.z() > 0.0)) return false;
    const double iz = 1.0 / pc.z();
    uv = {k.fx * pc.x() * iz + k.cx, k.fy * pc.y() * iz + k.cy};
    if (jac != nullptr) {
        Eigen::Matrix<double, 2, 3> dpi;
        dpi << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
        Eigen::Matrix<double, 3, 6> dpc;
        dpc.leftCols<3>() = -r * skew(p_world);
        dpc.rightCols<3>() = r;
        *jac = dpi * dpc;
    }
    return true;
}

namespace detail {
inline constexpr double kSmallAngle = 1e-8;
}

/// SE(3) exponential, xi = (omega, v): rotation block first.
inline PoseSE3 se3_exp(const Vec6& xi) {
    const Vec3 w = xi.head<3>();
    const Vec3 v = xi.tail<3>();
    const double theta = w.norm();
    const Mat3 wx = skew(w);
    Eigen::Quaterniond q;
    Mat3 vmat;
    if (theta < detail::kSmallAngle) {
        q = Eigen::Quaterniond(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
        vmat = Mat3::Identity() + 0.5 * wx;
    } else {
        q = Eigen::Quaterniond(Eigen::AngleAxisd(theta, w / theta));
        const double th2 = theta * theta;
        const double s = std::sin(0.5 * theta);
        const double a = 2.0 * s * s / th2;                   // (1 - cos) / theta^2
        const double b = (theta - std::sin(theta)) / (th2 * theta);  // (theta - sin) / theta^3
        vmat = Mat3::Identity() + a * wx + b * wx * wx;
    }
    return {q, vmat * v};
}

inline Vec6 se3_log(const PoseSE3& pose) {
    Eigen::Quaterniond q = pose.rotation();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    const double vn = q.vec().norm();
    const double theta = 2.0 * std::atan2(vn, q.w());
    Vec3 w;
    if (vn < detail::kSmallAngle) {
        w = (2.0 / q.w()) * q.vec();
    } else {
        w = (theta / vn) * q.vec();
    }
    const Mat3 wx = skew(w);
    double c;
    if (theta < 1e-3) {
        const double t2 = theta * theta;
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
    } else {
        const double half = 0.5 * theta;
        c = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
    }
    const Mat3 vinv = Mat3::Identity() - 0.5 * wx + c * wx * wx;
    Vec6 xi;
    xi.head<3>() = w;
    xi.tail<3>() = vinv * pose.translation();
    return xi;
}

/// Angle of a unit quaternion, radians in [0, pi].
inline double rotation_angle(const Eigen::Quaterniond& q) {
    return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

struct PoseErrorValue {
    double rot_deg = 0.0;
    double transl_m = 0.0;
};

/// Error between two cam_from_world poses: geodesic rotation angle and the
/// distance between camera centers.
inline PoseErrorValue pose_error(const PoseSE3& a, const PoseSE3& b) {
    const Eigen::Quaterniond rel = a.rotation().conjugate() * b.rotation();
    return {rad2deg(rotation_angle(rel)), (a.center() - b.center()).norm()};
}

struct PerturbBounds {
    double max_transl_per_axis = 2.0;  // meters
    double max_rot_per_axis = 10.0;    // degrees
};

/// Random disturbance of a cam_from_world pose, applied in the camera frame:
/// uniform per-axis translation and uniform per-axis (x, y, z) Euler rotation.
inline PoseSE3 perturb_pose(const PoseSE3& cam_from_world, const PerturbBounds& bounds, std::uint64_t seed) {
    if (bounds.max_transl_per_axis < 0.0 || bounds.max_rot_per_axis < 0.0)
        throw std::invalid_argument("perturb bounds must be non-negative");
    if (bounds.max_transl_per_axis == 0.0 && bounds.max_rot_per_axis == 0.0) return cam_from_world;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec3 dt;
    for (int i = 0; i < 3; ++i) dt[i] = bounds.max_transl_per_axis * unit(rng);
    Vec3 angles;
    for (int i = 0; i < 3; ++i) angles[i] = deg2rad(bounds.max_rot_per_axis) * unit(rng);
    const Eigen::Quaterniond dq = Eigen::AngleAxisd(angles.x(), Vec3::UnitX()) *
                                  Eigen::AngleAxisd(angles.y(), Vec3::UnitY()) *
                                  Eigen::AngleAxisd(angles.z(), Vec3::UnitZ());
    const PoseSE3 delta(dq, dt);
    // world_from_cam' = world_from_cam * delta
    return delta.inverse() * cam_from_world;
}

}  // namespace mvtrack
