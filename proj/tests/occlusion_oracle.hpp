#pragma once

// Independent per-vertex visibility oracle and random scene generator shared
// by the annotation unit tests and the acceptance binary. The oracle never
// looks at a depth map: it casts the segment from the camera to each vertex
// and tests it against every other box.

#include <array>
#include <vector>

#include "simsync/annotate.hpp"
#include "simsync/geometry.hpp"
#include "simsync/rng.hpp"
#include "simsync/world.hpp"

namespace simsync::fixtures {

struct OcclusionScene {
    WorldState world;  // ego at the origin; the camera sits on the ego with an identity mount
    SensorSpec camera;
};

inline SensorSpec oracle_camera(int size = 128) {
    SensorSpec cam;
    cam.sensor_id = "depth0";
    cam.kind = SensorKind::Depth;
    cam.width = size;
    cam.height = size;
    cam.fov_deg = 90.0;
    return cam;
}

inline WorldState empty_world() {
    WorldState w;
    w.fps = 30;
    w.ego_id = 1;
    ActorState ego;
    ego.actor_id = 1;
    ego.cls = ActorClass::Ego;
    ego.extent = {0.1, 0.1, 0.1};
    w.actors.push_back(ego);
    return w;
}

inline void add_box(WorldState& w, const Vec3& center, const Vec3& extent, const RotationRPY& rotation = {}) {
    ActorState a;
    a.actor_id = static_cast<std::uint32_t>(w.actors.size() + 1);
    a.cls = ActorClass::Vehicle;
    a.pose = {center, rotation};
    a.extent = extent;
    w.actors.push_back(a);
}

// 1..max_boxes boxes in front of the camera, arbitrary orientation, never
// enclosing the camera. Like actors in the world, boxes never interpenetrate
// (their bounding spheres are disjoint).
inline OcclusionScene random_scene(SplitMix64& rng, int max_boxes = 5, int size = 128) {
    OcclusionScene s{empty_world(), oracle_camera(size)};
    const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_boxes)));
    while (static_cast<int>(s.world.actors.size()) < n + 1) {
        const double x = rng.uniform(3.0, 25.0);
        const Vec3 center{x, rng.uniform(-0.7, 0.7) * x, rng.uniform(-0.5, 0.5) * x * 0.6};
        const Vec3 extent{rng.uniform(0.3, 2.5), rng.uniform(0.3, 2.0), rng.uniform(0.3, 1.5)};
        if (center.norm() <= extent.norm() + 0.5) {
            continue;
        }
        bool overlaps = false;
        for (std::size_t j = 1; j < s.world.actors.size(); ++j) {
            const auto& other = s.world.actors[j];
            overlaps = overlaps || (other.pose.location - center).norm() <= other.extent.norm() + extent.norm();
        }
        if (overlaps) {
            continue;
        }
        add_box(s.world, center, extent,
                {rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0), rng.uniform(-180.0, 180.0)});
    }
    return s;
}

// Per-vertex oracle for actor `index`: in front, inside the image, and the
// segment camera -> vertex meets no other box.
inline std::array<bool, 8> oracle_visible(const WorldState& w, const SensorSpec& cam, std::size_t index) {
    const CameraIntrinsics k = intrinsics_from_fov(cam.width, cam.height, cam.fov_deg);
    const RigidTransform sensor = sensor_to_world(w, cam);
    const RigidTransform world_to_sensor = sensor.inverse();
    const auto vertices = box_vertices(w.actors[index].box());
    std::array<bool, 8> out{};
    for (std::size_t i = 0; i < 8; ++i) {
        const Vec3 p = world_to_sensor.apply(vertices[i]);
        if (!(p.x > kBehindCameraThreshold)) {
            continue;
        }
        const double u = k.cx + k.fx * p.y / p.x;
        const double v = k.cy - k.fy * p.z / p.x;
        if (u < 0.0 || v < 0.0 || u >= cam.width || v >= cam.height) {
            continue;
        }
        bool blocked = false;
        for (std::size_t j = 0; j < w.actors.size() && !blocked; ++j) {
            if (j == index || w.actors[j].actor_id == w.ego_id) {
                continue;
            }
            const auto t = ray_box_intersect(sensor.translation, vertices[i] - sensor.translation, w.actors[j].box());
            blocked = t && *t < 1.0;
        }
        out[i] = !blocked;
    }
    return out;
}

// The pipeline's view: ray-cast depth, through the 24-bit codec, into is_visible.
inline Visibility depth_visibility(const WorldState& w, const SensorSpec& cam, std::size_t index) {
    const auto encoded = encode_depth_rgb(render_depth(w, cam), 4);
    const DepthImage depth = decode_depth(encoded.bytes, cam.width, cam.height, 4);
    const CameraIntrinsics k = intrinsics_from_fov(cam.width, cam.height, cam.fov_deg);
    return is_visible(depth, sensor_to_world(w, cam).inverse(), k, w.actors[index].box());
}

struct OracleAgreement {
    std::size_t vertices = 0;
    std::size_t agree = 0;
    std::size_t boxes = 0;
    std::size_t count_agree = 0;
    std::array<std::size_t, 3> classes{};  // occlusion classes seen (depth method)
    // Disagreements by cause: an occluding face within the depth tolerance of
    // the vertex, or an occluder edge passing between the vertex and the
    // center of its pixel. Anything else is unexplained.
    std::size_t in_tolerance_band = 0;
    std::size_t pixel_edge = 0;
    std::size_t unexplained = 0;
};

// Nearest planar depth of any box other than `index` along the sensor-frame
// ray (1, y, z) from the camera; the background depth when nothing is hit.
inline double nearest_other_depth(const WorldState& w, const RigidTransform& sensor, const Vec3& ray_sensor,
                                  std::size_t index) {
    double best = kBackgroundDepth;
    const Vec3 dir = sensor.rotation * ray_sensor;
    for (std::size_t j = 0; j < w.actors.size(); ++j) {
        if (j == index || w.actors[j].actor_id == w.ego_id) {
            continue;
        }
        if (const auto t = ray_box_intersect(sensor.translation, dir, w.actors[j].box())) {
            best = std::min(best, *t);
        }
    }
    return best;
}

enum class Disagreement { ToleranceBand, PixelEdge, Unexplained };

inline Disagreement explain_disagreement(const WorldState& w, const SensorSpec& cam, std::size_t index,
                                         std::size_t vertex) {
    const CameraIntrinsics k = intrinsics_from_fov(cam.width, cam.height, cam.fov_deg);
    const RigidTransform sensor = sensor_to_world(w, cam);
    const Vec3 p = sensor.inverse().apply(box_vertices(w.actors[index].box())[vertex]);
    const double z = p.x;
    const double u = k.cx + k.fx * p.y / p.x;
    const double v = k.cy - k.fy * p.z / p.x;
    const int pu = static_cast<int>(u);
    const int pv = static_cast<int>(v);
    const double along_vertex = nearest_other_depth(w, sensor, p * (1.0 / z), index);
    const double along_pixel =
        nearest_other_depth(w, sensor, {1.0, ((pu + 0.5) - k.cx) / k.fx, -((pv + 0.5) - k.cy) / k.fy}, index);
    const double eps = occlusion_tolerance(z) + 1e-4;  // plus the depth quantization step
    if (std::abs(along_vertex - z) <= eps || std::abs(along_pixel - z) <= eps) {
        return Disagreement::ToleranceBand;
    }
    if ((along_vertex < z) != (along_pixel < z)) {
        return Disagreement::PixelEdge;
    }
    return Disagreement::Unexplained;
}

inline void accumulate(OracleAgreement& acc, const WorldState& w, const SensorSpec& cam) {
    for (std::size_t i = 0; i < w.actors.size(); ++i) {
        if (w.actors[i].actor_id == w.ego_id) {
            continue;
        }
        const auto oracle = oracle_visible(w, cam, i);
        const auto vis = depth_visibility(w, cam, i);
        int oracle_count = 0;
        for (std::size_t v = 0; v < 8; ++v) {
            ++acc.vertices;
            if (oracle[v] == vis.vertex_visible[v]) {
                ++acc.agree;
            } else {
                switch (explain_disagreement(w, cam, i, v)) {
                    case Disagreement::ToleranceBand: ++acc.in_tolerance_band; break;
                    case Disagreement::PixelEdge: ++acc.pixel_edge; break;
                    case Disagreement::Unexplained: ++acc.unexplained; break;
                }
            }
            oracle_count += oracle[v] ? 1 : 0;
        }
        ++acc.boxes;
        acc.count_agree += oracle_count == vis.visible_vertices ? 1 : 0;
        ++acc.classes[static_cast<std::size_t>(vis.occlusion)];
    }
}

}  // namespace simsync::fixtures
