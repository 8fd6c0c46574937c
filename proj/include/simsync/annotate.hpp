#pragma once

// Visible-object annotation from a depth camera: distance filter, depth
// decoding, per-vertex occlusion test, occlusion class, yaw and observation
// angles, truncation, LiDAR point gating and KITTI-style label lines.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simsync/config.hpp"
#include "simsync/geometry.hpp"
#include "simsync/world.hpp"

namespace simsync {

struct AnnotationRecord {
    std::int64_t frame_id = 0;
    std::uint32_t actor_id = 0;
    ActorClass cls = ActorClass::Vehicle;
    int occlusion = 0;
    double truncation = 0.0;
    double theta_y = 0.0;  // radians, (-pi, pi]
    double alpha = 0.0;    // radians, (-pi, pi]
    BBox2D bbox2d;
    Vec3 location_sensor;
    Vec3 dimensions;  // full size: 2 * extent
    double distance_m = 0.0;
    int visible_vertices = 0;
    int lidar_points = 0;
};

// Keeps non-ego actors whose center lies within max_distance_m (inclusive) of the ego center.
std::vector<ActorState> filter_by_distance(std::span<const ActorState> actors, const ActorState& ego,
                                           double max_distance_m);

// D = 1000 * (R + 256 G + 256^2 B) / (256^3 - 1), metres.
double decode_depth_code(std::uint8_t r, std::uint8_t g, std::uint8_t b);
DepthImage decode_depth(std::span<const std::uint8_t> encoded, int width, int height, int channels);

// Depth slack used when comparing a vertex against the depth map.
double occlusion_tolerance(double vertex_depth);

struct Visibility {
    int visible_vertices = 0;
    int occlusion = 2;
    std::optional<BBox2D> bbox2d;  // from the in-front projected vertices
    Vec3 location_sensor;          // box center in the sensor frame
    std::array<bool, 8> vertex_visible{};
};

// A vertex is visible when it lies in front of the camera, inside the image,
// and nothing nearer than the object itself covers its pixel:
// Z <= D(u, v) + eps, where Z is capped at the object's own surface depth
// along that pixel's ray so the object never occludes its own corners.
Visibility is_visible(const DepthImage& depth, const RigidTransform& world_to_sensor, const CameraIntrinsics& k,
                      const OrientedBox& box_world);

// >= 6 visible -> 0, 4..5 -> 1, < 4 -> 2. Throws std::out_of_range outside 0..8.
int classify_occlusion(int visible_vertices);

// wrap(yaw_o - yaw_s - 90 deg), radians.
double rotation_angle(double yaw_object_deg, double yaw_sensor_deg);

// wrap(theta_y - atan2(lateral, forward)) with forward = x, lateral = y of the
// sensor frame. Throws std::domain_error for an object at the sensor origin.
double observation_angle(double theta_y, const Vec3& location_sensor);

// (8 - visible) / 8.
double truncation_ratio(int visible_vertices);

std::map<std::uint32_t, int> count_lidar_hits(const LidarScan& scan);

struct AnnotationContext {
    std::int64_t frame_id = 0;
    const std::vector<ActorState>* actors = nullptr;  // world snapshot, ego included
    std::uint32_t ego_id = 0;
    const SensorSpec* camera = nullptr;
    const DepthImage* depth = nullptr;
    double max_distance_m = 50.0;
    // Present when the run has a LiDAR; actors need min_lidar_points hits.
    const std::map<std::uint32_t, int>* lidar_hits = nullptr;
    int min_lidar_points = 0;
};

// Records for every surviving actor (at least one visible vertex, LiDAR gate
// passed), in lexicographic order of the decimal actor_id.
std::vector<AnnotationRecord> annotate_frame(const AnnotationContext& ctx);

// `class truncation occlusion alpha left top right bottom dim_z dim_y dim_x loc_x loc_y loc_z theta_y`
std::string format_label_line(const AnnotationRecord& r);
std::string format_labels(const std::vector<AnnotationRecord>& records);

}  // namespace simsync
