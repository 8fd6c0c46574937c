#pragma once

// Left-handed, z-up frame: +x forward, +y right, +z up. Angles are degrees
// at every public boundary and radians only inside the implementation.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

namespace simsync {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    constexpr bool operator==(const Vec3&) const = default;
};

struct RotationRPY {
    double roll = 0.0;   // about X
    double pitch = 0.0;  // about Y
    double yaw = 0.0;    // about Z

    constexpr bool operator==(const RotationRPY&) const = default;
};

struct Pose {
    Vec3 location;
    RotationRPY rotation;

    constexpr bool operator==(const Pose&) const = default;
};

struct OrientedBox {
    Vec3 center;
    Vec3 extent;  // half dimensions
    RotationRPY rotation;
};

struct Mat3 {
    std::array<std::array<double, 3>, 3> m{};

    static constexpr Mat3 identity() { return Mat3{{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}}; }
    Vec3 operator*(const Vec3& v) const;
    Mat3 operator*(const Mat3& o) const;
    Mat3 transposed() const;
    double determinant() const;
};

struct RigidTransform {
    Mat3 rotation = Mat3::identity();
    Vec3 translation;

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;
    // (*this) after `inner`: x -> this(inner(x)).
    RigidTransform compose(const RigidTransform& inner) const;
};

struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
};

struct ImagePoint {
    double u = 0.0;
    double v = 0.0;
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

struct BBox2D {
    double left = 0.0;
    double top = 0.0;
    double right = 0.0;
    double bottom = 0.0;
    bool degenerate = false;
};

inline constexpr double kBehindCameraThreshold = 1e-6;

// Wraps to (-180, 180].
double normalize_degrees(double deg);
// Wraps to (-pi, pi].
double wrap_radians(double rad);

RotationRPY normalize(const RotationRPY& r);

// Rz(yaw) * Ry(pitch) * Rx(roll) with the left-handed sign conventions:
// positive yaw turns +x toward +y, positive pitch lifts +x toward +z,
// positive roll drops +y toward -z.
Mat3 rotation_matrix(const RotationRPY& r);

RigidTransform to_transform(const Pose& p);
Vec3 apply_pose(const Pose& p, const Vec3& local);
RigidTransform invert_pose(const Pose& p);

// Pose of a child rigidly mounted on `parent` at offset `mount`, in the parent's parent frame.
RigidTransform mounted_transform(const Pose& parent, const Pose& mount);

// Throws std::invalid_argument when fov is outside (0, 180) or the size is not positive.
CameraIntrinsics intrinsics_from_fov(int width, int height, double fov_deg);

// Sensor frame is x-forward, y-right, z-up. Returns nullopt when the point
// is behind (or on) the camera plane.
std::optional<Projection> project_to_image(const CameraIntrinsics& k, const Vec3& p_sensor);

// Vertex i has x sign (i & 4 ? + : -), y sign (i & 2), z sign (i & 1).
std::array<Vec3, 8> box_vertices(const OrientedBox& b);

std::optional<BBox2D> bbox2d_from_points(std::span<const ImagePoint> points, int width, int height);

// Slab test of a ray against a box. Returns the smallest t >= 0 along
// origin + t * dir at which the ray is inside the box, or nullopt.
std::optional<double> ray_box_intersect(const Vec3& origin, const Vec3& dir, const OrientedBox& box);

}  // namespace simsync
