#include "simsync/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace simsync {

std::vector<ActorState> filter_by_distance(std::span<const ActorState> actors, const ActorState& ego,
                                           double max_distance_m) {
    std::vector<ActorState> kept;
    for (const auto& a : actors) {
        if (a.actor_id == ego.actor_id) {
            continue;
        }
        if ((a.pose.location - ego.pose.location).norm() <= max_distance_m) {
            kept.push_back(a);
        }
    }
    return kept;
}

double decode_depth_code(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const double code = r + 256.0 * g + 65536.0 * b;
    return 1000.0 * code / 16777215.0;
}

DepthImage decode_depth(std::span<const std::uint8_t> encoded, int width, int height, int channels) {
    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    if (encoded.size() != pixels * channels) {
        throw std::invalid_argument("encoded depth size does not match the image geometry");
    }
    DepthImage d;
    d.width = width;
    d.height = height;
    d.meters.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        const std::uint8_t* px = encoded.data() + i * channels;
        d.meters[i] = decode_depth_code(px[0], px[1], px[2]);
    }
    return d;
}

double occlusion_tolerance(double vertex_depth) {
    return std::max(0.1, 0.01 * vertex_depth);
}

Visibility is_visible(const DepthImage& depth, const RigidTransform& world_to_sensor, const CameraIntrinsics& k,
                      const OrientedBox& box_world) {
    Visibility out;
    out.location_sensor = world_to_sensor.apply(box_world.center);

    // The box expressed in the sensor frame, for own-surface depth lookups.
    const RigidTransform box_to_world = to_transform({box_world.center, box_world.rotation});
    const RigidTransform box_to_sensor = world_to_sensor.compose(box_to_world);
    const Mat3 sensor_to_box = box_to_sensor.rotation.transposed();
    const Vec3 camera_in_box = sensor_to_box * -box_to_sensor.translation;
    const OrientedBox local_box{{0.0, 0.0, 0.0}, box_world.extent, {}};

    std::vector<ImagePoint> projected;
    const auto vertices = box_vertices(box_world);
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const auto p = project_to_image(k, world_to_sensor.apply(vertices[i]));
        if (!p) {
            continue;
        }
        projected.push_back({p->u, p->v});
        if (p->u < 0.0 || p->v < 0.0 || p->u >= k.width || p->v >= k.height) {
            continue;
        }
        const int pu = static_cast<int>(p->u);
        const int pv = static_cast<int>(p->v);
        const Vec3 ray{1.0, ((pu + 0.5) - k.cx) / k.fx, -((pv + 0.5) - k.cy) / k.fy};
        const auto own = ray_box_intersect(camera_in_box, sensor_to_box * ray, local_box);
        const double z = own ? std::min(p->depth, *own) : p->depth;
        if (z <= depth.at(pu, pv) + occlusion_tolerance(z)) {
            out.vertex_visible[i] = true;
            ++out.visible_vertices;
        }
    }
    out.bbox2d = bbox2d_from_points(projected, k.width, k.height);
    out.occlusion = classify_occlusion(out.visible_vertices);
    return out;
}

int classify_occlusion(int visible_vertices) {
    if (visible_vertices < 0 || visible_vertices > 8) {
        throw std::out_of_range("visible vertex count must be in 0..8, got " + std::to_string(visible_vertices));
    }
    if (visible_vertices >= 6) {
        return 0;
    }
    if (visible_vertices >= 4) {
        return 1;
    }
    return 2;
}

double rotation_angle(double yaw_object_deg, double yaw_sensor_deg) {
    // Wrap in degrees before converting so whole turns cancel exactly.
    const double deg = normalize_degrees(normalize_degrees(yaw_object_deg) - normalize_degrees(yaw_sensor_deg) - 90.0);
    return wrap_radians(deg * kDegToRad);
}

double observation_angle(double theta_y, const Vec3& location_sensor) {
    if (location_sensor.x == 0.0 && location_sensor.y == 0.0) {
        throw std::domain_error("observation angle undefined for an object at the sensor origin");
    }
    return wrap_radians(theta_y - std::atan2(location_sensor.y, location_sensor.x));
}

double truncation_ratio(int visible_vertices) {
    // Literal rule is (visible - 8) / 8, which lands in [-1, 0]; the sign is flipped.
    if (visible_vertices < 0 || visible_vertices > 8) {
        throw std::out_of_range("visible vertex count must be in 0..8");
    }
    return (8 - visible_vertices) / 8.0;
}

std::map<std::uint32_t, int> count_lidar_hits(const LidarScan& scan) {
    std::map<std::uint32_t, int> counts;
    for (const auto& p : scan.points) {
        if (p.actor_id != 0) {
            ++counts[p.actor_id];
        }
    }
    return counts;
}

std::vector<AnnotationRecord> annotate_frame(const AnnotationContext& ctx) {
    const auto& actors = *ctx.actors;
    const auto ego_it = std::find_if(actors.begin(), actors.end(),
                                     [&](const ActorState& a) { return a.actor_id == ctx.ego_id; });
    if (ego_it == actors.end()) {
        throw std::invalid_argument("snapshot has no ego actor");
    }
    const ActorState& ego = *ego_it;
    const SensorSpec& cam = *ctx.camera;
    const CameraIntrinsics k = intrinsics_from_fov(cam.width, cam.height, cam.fov_deg);
    const RigidTransform sensor_to_world_tf = mounted_transform(ego.pose, cam.mount_pose);
    const RigidTransform world_to_sensor = sensor_to_world_tf.inverse();
    const double sensor_yaw_deg =
        std::atan2(sensor_to_world_tf.rotation.m[1][0], sensor_to_world_tf.rotation.m[0][0]) * kRadToDeg;

    std::vector<AnnotationRecord> records;
    for (const auto& actor : filter_by_distance(actors, ego, ctx.max_distance_m)) {
        int hits = 0;
        if (ctx.lidar_hits) {
            const auto it = ctx.lidar_hits->find(actor.actor_id);
            hits = it == ctx.lidar_hits->end() ? 0 : it->second;
            if (hits < ctx.min_lidar_points) {
                continue;
            }
        }
        const Visibility vis = is_visible(*ctx.depth, world_to_sensor, k, actor.box());
        if (vis.visible_vertices == 0 || !vis.bbox2d) {
            continue;
        }
        AnnotationRecord r;
        r.frame_id = ctx.frame_id;
        r.actor_id = actor.actor_id;
        r.cls = actor.cls;
        r.visible_vertices = vis.visible_vertices;
        r.occlusion = vis.occlusion;
        r.truncation = truncation_ratio(vis.visible_vertices);
        r.theta_y = rotation_angle(actor.pose.rotation.yaw, sensor_yaw_deg);
        r.alpha = observation_angle(r.theta_y, vis.location_sensor);
        r.bbox2d = *vis.bbox2d;
        r.location_sensor = vis.location_sensor;
        r.dimensions = actor.extent * 2.0;
        r.distance_m = (actor.pose.location - ego.pose.location).norm();
        r.lidar_points = hits;
        records.push_back(r);
    }
    // Lexicographic order of the decimal id, as the label interface fixes it.
    std::sort(records.begin(), records.end(), [](const AnnotationRecord& a, const AnnotationRecord& b) {
        return std::to_string(a.actor_id) < std::to_string(b.actor_id);
    });
    return records;
}

std::string format_label_line(const AnnotationRecord& r) {
    char buf[512];
    const int n = std::snprintf(
        buf, sizeof(buf), "%s %.6f %d %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n",
        std::string(to_string(r.cls)).c_str(), r.truncation, r.occlusion, r.alpha, r.bbox2d.left, r.bbox2d.top,
        r.bbox2d.right, r.bbox2d.bottom, r.dimensions.z, r.dimensions.y, r.dimensions.x, r.location_sensor.x,
        r.location_sensor.y, r.location_sensor.z, r.theta_y);
    return std::string(buf, static_cast<std::size_t>(n));
}

std::string format_labels(const std::vector<AnnotationRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += format_label_line(r);
    }
    return out;
}

}  // namespace simsync
