#include "simsync/geometry.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace simsync {

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 out;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out.m[r][c] = m[r][0] * o.m[0][c] + m[r][1] * o.m[1][c] + m[r][2] * o.m[2][c];
        }
    }
    return out;
}

Mat3 Mat3::transposed() const {
    Mat3 out;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out.m[r][c] = m[c][r];
        }
    }
    return out;
}

double Mat3::determinant() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform out;
    out.rotation = rotation.transposed();
    out.translation = -(out.rotation * translation);
    return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
    RigidTransform out;
    out.rotation = rotation * inner.rotation;
    out.translation = rotation * inner.translation + translation;
    return out;
}

double normalize_degrees(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r <= -180.0) {
        r += 360.0;
    } else if (r > 180.0) {
        r -= 360.0;
    }
    return r;
}

double wrap_radians(double rad) {
    double r = std::fmod(rad, 2.0 * kPi);
    if (r <= -kPi) {
        r += 2.0 * kPi;
    } else if (r > kPi) {
        r -= 2.0 * kPi;
    }
    return r;
}

RotationRPY normalize(const RotationRPY& r) {
    return {normalize_degrees(r.roll), normalize_degrees(r.pitch), normalize_degrees(r.yaw)};
}

Mat3 rotation_matrix(const RotationRPY& r) {
    const double cy = std::cos(r.yaw * kDegToRad);
    const double sy = std::sin(r.yaw * kDegToRad);
    const double cp = std::cos(r.pitch * kDegToRad);
    const double sp = std::sin(r.pitch * kDegToRad);
    const double cr = std::cos(r.roll * kDegToRad);
    const double sr = std::sin(r.roll * kDegToRad);
    Mat3 out;
    out.m = {{{cp * cy, cy * sp * sr - sy * cr, -cy * sp * cr - sy * sr},
              {cp * sy, sy * sp * sr + cy * cr, -sy * sp * cr + cy * sr},
              {sp, -cp * sr, cp * cr}}};
    return out;
}

RigidTransform to_transform(const Pose& p) {
    return {rotation_matrix(p.rotation), p.location};
}

Vec3 apply_pose(const Pose& p, const Vec3& local) {
    return to_transform(p).apply(local);
}

RigidTransform invert_pose(const Pose& p) {
    return to_transform(p).inverse();
}

RigidTransform mounted_transform(const Pose& parent, const Pose& mount) {
    return to_transform(parent).compose(to_transform(mount));
}

CameraIntrinsics intrinsics_from_fov(int width, int height, double fov_deg) {
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) {
        throw std::invalid_argument("fov_deg must be in (0, 180), got " + std::to_string(fov_deg));
    }
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("image size must be positive");
    }
    const double f = width / (2.0 * std::tan(fov_deg * kDegToRad / 2.0));
    return {f, f, width / 2.0, height / 2.0, width, height};
}

std::optional<Projection> project_to_image(const CameraIntrinsics& k, const Vec3& p) {
    if (p.x <= kBehindCameraThreshold) {
        return std::nullopt;
    }
    return Projection{k.cx + k.fx * (p.y / p.x), k.cy - k.fy * (p.z / p.x), p.x};
}

std::array<Vec3, 8> box_vertices(const OrientedBox& b) {
    const Mat3 rot = rotation_matrix(b.rotation);
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
        const Vec3 local{(i & 4) ? b.extent.x : -b.extent.x,
                         (i & 2) ? b.extent.y : -b.extent.y,
                         (i & 1) ? b.extent.z : -b.extent.z};
        out[i] = b.center + rot * local;
    }
    return out;
}

std::optional<BBox2D> bbox2d_from_points(std::span<const ImagePoint> points, int width, int height) {
    if (points.empty()) {
        return std::nullopt;
    }
    double min_u = std::numeric_limits<double>::infinity();
    double min_v = min_u;
    double max_u = -min_u;
    double max_v = -min_u;
    for (const auto& p : points) {
        min_u = std::min(min_u, p.u);
        max_u = std::max(max_u, p.u);
        min_v = std::min(min_v, p.v);
        max_v = std::max(max_v, p.v);
    }
    if (max_u < 0.0 || max_v < 0.0 || min_u > width || min_v > height) {
        return std::nullopt;
    }
    BBox2D box;
    box.left = std::clamp(min_u, 0.0, static_cast<double>(width));
    box.right = std::clamp(max_u, 0.0, static_cast<double>(width));
    box.top = std::clamp(min_v, 0.0, static_cast<double>(height));
    box.bottom = std::clamp(max_v, 0.0, static_cast<double>(height));
    box.degenerate = box.right <= box.left || box.bottom <= box.top;
    return box;
}

std::optional<double> ray_box_intersect(const Vec3& origin, const Vec3& dir, const OrientedBox& box) {
    const Mat3 rot_t = rotation_matrix(box.rotation).transposed();
    const Vec3 o = rot_t * (origin - box.center);
    const Vec3 d = rot_t * dir;
    const std::array<double, 3> oa{o.x, o.y, o.z};
    const std::array<double, 3> da{d.x, d.y, d.z};
    const std::array<double, 3> ea{box.extent.x, box.extent.y, box.extent.z};
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(da[axis]) < 1e-15) {
            if (oa[axis] < -ea[axis] || oa[axis] > ea[axis]) {
                return std::nullopt;
            }
            continue;
        }
        double t0 = (-ea[axis] - oa[axis]) / da[axis];
        double t1 = (ea[axis] - oa[axis]) / da[axis];
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
        if (t_near > t_far) {
            return std::nullopt;
        }
    }
    if (t_far < 0.0) {
        return std::nullopt;
    }
    return std::max(t_near, 0.0);
}

}  // namespace simsync
