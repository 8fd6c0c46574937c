#include "simsync/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "simsync/rng.hpp"

namespace simsync {

namespace {

struct EgoModel {
    const char* name;
    Vec3 extent;
};

constexpr EgoModel kEgoModels[] = {
    {"sedan", {2.40, 1.00, 0.75}},
    {"suv", {2.45, 1.05, 0.90}},
    {"van", {2.60, 1.10, 1.20}},
    {"truck", {3.60, 1.30, 1.60}},
};

constexpr Vec3 kVehicleExtents[] = {
    {2.25, 0.95, 0.75}, {2.40, 1.00, 0.80}, {1.85, 0.90, 0.75}, {2.70, 1.10, 1.05}, {1.10, 0.40, 0.80}};

constexpr Vec3 kPedestrianExtent{0.30, 0.30, 0.90};
constexpr double kEgoSpeed = 8.0;

double wrap_coordinate(double x, double half) {
    const double span = 2.0 * half;
    return x - span * std::floor((x + half) / span);
}

Vec3 ego_extent(const std::string& ego_type) {
    for (const auto& model : kEgoModels) {
        if (ego_type == model.name) {
            return model.extent;
        }
    }
    return kEgoModels[0].extent;
}

double footprint_radius(const Vec3& extent) {
    return std::hypot(extent.x, extent.y);
}

Mat3 yaw_matrix(double yaw_deg) {
    return rotation_matrix({0.0, 0.0, yaw_deg});
}

// Per-box data reused across every ray of one sensor.
struct PreparedBox {
    std::int32_t index;
    Vec3 origin_local;  // sensor origin in box coordinates
    Mat3 to_local;      // sensor-frame direction -> box-frame direction
    Vec3 extent;
};

std::optional<double> slab(const Vec3& o, const Vec3& d, const Vec3& e) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    const double oa[3] = {o.x, o.y, o.z};
    const double da[3] = {d.x, d.y, d.z};
    const double ea[3] = {e.x, e.y, e.z};
    for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(da[axis]) < 1e-15) {
            if (oa[axis] < -ea[axis] || oa[axis] > ea[axis]) {
                return std::nullopt;
            }
            continue;
        }
        const double inv = 1.0 / da[axis];
        double t0 = (-ea[axis] - oa[axis]) * inv;
        double t1 = (ea[axis] - oa[axis]) * inv;
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

std::vector<PreparedBox> prepare_boxes(const WorldState& w, const RigidTransform& sensor) {
    std::vector<PreparedBox> out;
    out.reserve(w.actors.size());
    for (std::size_t i = 0; i < w.actors.size(); ++i) {
        const auto& a = w.actors[i];
        if (a.actor_id == w.ego_id) {
            continue;
        }
        const Mat3 box_t = rotation_matrix(a.pose.rotation).transposed();
        out.push_back({static_cast<std::int32_t>(i), box_t * (sensor.translation - a.pose.location),
                       box_t * sensor.rotation, a.extent});
    }
    return out;
}

}  // namespace

std::string_view to_string(ActorClass cls) {
    switch (cls) {
        case ActorClass::Ego: return "ego";
        case ActorClass::Vehicle: return "vehicle";
        case ActorClass::Pedestrian: return "pedestrian";
    }
    return "Unknown";
}

Vec3 ActorState::world_velocity() const {
    return yaw_matrix(pose.rotation.yaw) * velocity;
}

const ActorState& WorldState::ego() const {
    for (const auto& a : actors) {
        if (a.actor_id == ego_id) {
            return a;
        }
    }
    throw std::logic_error("world has no ego actor");
}

WorldState spawn_world(const ValidatedConfig& validated, std::uint64_t seed, const WorldParams& params) {
    const RunConfig& cfg = validated.get();
    const auto total = static_cast<std::uint64_t>(cfg.num_vehicles) + cfg.num_pedestrians + 1;
    if (total > kMaxActorId) {
        throw SpawnError("actor ids must fit in 16 bits");
    }
    WorldState w;
    w.fps = cfg.fps;
    w.seed = seed;
    w.weather = cfg.weather;
    w.half_size_m = params.half_size_m;

    ActorState ego;
    ego.actor_id = 1;
    ego.cls = ActorClass::Ego;
    ego.extent = ego_extent(cfg.ego_type);
    ego.pose.location = {0.0, 0.0, ego.extent.z};
    ego.velocity = {kEgoSpeed, 0.0, 0.0};
    w.ego_id = ego.actor_id;
    w.actors.push_back(ego);

    SplitMix64 rng(derive_seed(seed, 0x5be11));
    auto place = [&](ActorState actor) {
        const double radius = footprint_radius(actor.extent);
        for (int attempt = 0; attempt < params.max_spawn_attempts; ++attempt) {
            const double x = rng.uniform(-params.half_size_m, params.half_size_m);
            const double y = rng.uniform(-params.half_size_m, params.half_size_m);
            const bool clear = std::none_of(w.actors.begin(), w.actors.end(), [&](const ActorState& other) {
                const double gap = radius + footprint_radius(other.extent);
                return std::hypot(x - other.pose.location.x, y - other.pose.location.y) < gap;
            });
            if (clear) {
                actor.pose.location = {x, y, actor.extent.z};
                w.actors.push_back(actor);
                return;
            }
        }
        throw SpawnError("could not place actor " + std::to_string(actor.actor_id) + " after " +
                         std::to_string(params.max_spawn_attempts) + " attempts; world bounds too small");
    };

    std::uint32_t next_id = 2;
    for (int i = 0; i < cfg.num_vehicles; ++i) {
        ActorState v;
        v.actor_id = next_id++;
        v.cls = ActorClass::Vehicle;
        v.extent = kVehicleExtents[rng.below(std::size(kVehicleExtents))];
        v.pose.rotation.yaw = rng.uniform(-180.0, 180.0);
        v.velocity = {rng.uniform(3.0, 12.0), 0.0, 0.0};
        v.yaw_rate = rng.uniform(-5.0, 5.0);
        place(v);
    }
    for (int i = 0; i < cfg.num_pedestrians; ++i) {
        ActorState p;
        p.actor_id = next_id++;
        p.cls = ActorClass::Pedestrian;
        p.extent = kPedestrianExtent;
        p.pose.rotation.yaw = rng.uniform(-180.0, 180.0);
        p.velocity = {rng.uniform(0.5, 2.0), 0.0, 0.0};
        p.yaw_rate = rng.uniform(-20.0, 20.0);
        place(p);
    }
    return w;
}

WorldState step_world(const WorldState& w, const TimingPlan& plan) {
    WorldState next = w;
    const double dt = plan.substep_dt_s;
    for (auto& a : next.actors) {
        for (int s = 0; s < plan.substeps_per_frame; ++s) {
            a.pose.location = a.pose.location + yaw_matrix(a.pose.rotation.yaw) * a.velocity * dt;
            a.pose.rotation.yaw = normalize_degrees(a.pose.rotation.yaw + a.yaw_rate * dt);
        }
        a.pose.location.x = wrap_coordinate(a.pose.location.x, next.half_size_m);
        a.pose.location.y = wrap_coordinate(a.pose.location.y, next.half_size_m);
    }
    next.frame_id = w.frame_id + 1;
    next.sim_time_s = static_cast<double>(next.frame_id) / next.fps;
    return next;
}

RigidTransform sensor_to_world(const WorldState& w, const SensorSpec& spec) {
    return mounted_transform(w.ego().pose, spec.mount_pose);
}

CameraRaycast cast_camera(const WorldState& w, const SensorSpec& cam) {
    const CameraIntrinsics k = intrinsics_from_fov(cam.width, cam.height, cam.fov_deg);
    const RigidTransform sensor = sensor_to_world(w, cam);
    const RigidTransform world_to_sensor = sensor.inverse();

    CameraRaycast rc;
    rc.width = cam.width;
    rc.height = cam.height;
    const auto pixels = static_cast<std::size_t>(cam.width) * cam.height;
    rc.depth.assign(pixels, kBackgroundDepth);
    rc.actor_index.assign(pixels, -1);

    for (const auto& box : prepare_boxes(w, sensor)) {
        // Pixel rectangle covered by the projected box. For a box straddling the
        // camera plane the part in front is bounded by its front vertices plus
        // the points where its edges cross the near plane.
        constexpr double kNear = 1e-6;
        const auto world_vertices = box_vertices(w.actors[box.index].box());
        std::array<Vec3, 8> vertices;
        for (std::size_t i = 0; i < 8; ++i) {
            vertices[i] = world_to_sensor.apply(world_vertices[i]);
        }
        std::vector<Vec3> hull;
        for (std::size_t i = 0; i < 8; ++i) {
            if (vertices[i].x > kNear) {
                hull.push_back(vertices[i]);
            }
            for (std::size_t bit : {1U, 2U, 4U}) {
                const std::size_t j = i | bit;
                if (j == i) {
                    continue;
                }
                const Vec3& a = vertices[i];
                const Vec3& b = vertices[j];
                if ((a.x > kNear) != (b.x > kNear)) {
                    const double s = (kNear - a.x) / (b.x - a.x);
                    hull.push_back(a + (b - a) * s);
                }
            }
        }
        if (hull.empty()) {
            continue;
        }
        double min_u = std::numeric_limits<double>::infinity();
        double max_u = -min_u;
        double min_v = min_u;
        double max_v = -min_u;
        for (const auto& q : hull) {
            const double x = std::max(q.x, kNear);
            const double u = k.cx + k.fx * q.y / x;
            const double v = k.cy - k.fy * q.z / x;
            min_u = std::min(min_u, u);
            max_u = std::max(max_u, u);
            min_v = std::min(min_v, v);
            max_v = std::max(max_v, v);
        }
        if (max_u < 0.0 || min_u > cam.width || max_v < 0.0 || min_v > cam.height) {
            continue;
        }
        const int u0 = static_cast<int>(std::clamp(std::floor(min_u) - 1.0, 0.0, cam.width - 1.0));
        const int u1 = static_cast<int>(std::clamp(std::ceil(max_u) + 1.0, 0.0, cam.width - 1.0));
        const int v0 = static_cast<int>(std::clamp(std::floor(min_v) - 1.0, 0.0, cam.height - 1.0));
        const int v1 = static_cast<int>(std::clamp(std::ceil(max_v) + 1.0, 0.0, cam.height - 1.0));
        for (int v = v0; v <= v1; ++v) {
            const double dz = -((v + 0.5) - k.cy) / k.fy;
            for (int u = u0; u <= u1; ++u) {
                // Sensor-frame ray with unit forward component: t equals planar depth.
                const Vec3 dir{1.0, ((u + 0.5) - k.cx) / k.fx, dz};
                const auto t = slab(box.origin_local, box.to_local * dir, box.extent);
                if (!t) {
                    continue;
                }
                const std::size_t idx = static_cast<std::size_t>(v) * cam.width + u;
                if (*t < rc.depth[idx]) {
                    rc.depth[idx] = *t;
                    rc.actor_index[idx] = box.index;
                }
            }
        }
    }
    return rc;
}

DepthImage depth_from_raycast(const CameraRaycast& rc) {
    return {rc.width, rc.height, rc.depth};
}

DepthImage render_depth(const WorldState& w, const SensorSpec& cam) {
    return depth_from_raycast(cast_camera(w, cam));
}

EncodedDepth encode_depth_rgb(const DepthImage& d, int channels) {
    if (channels != 3 && channels != 4) {
        throw std::invalid_argument("depth encoding uses 3 or 4 channels");
    }
    constexpr double kMaxCode = 16777215.0;  // 256^3 - 1
    EncodedDepth out;
    out.width = d.width;
    out.height = d.height;
    out.channels = channels;
    out.bytes.resize(d.meters.size() * channels);
    std::uint8_t* dst = out.bytes.data();
    for (double meters : d.meters) {
        if (!(meters >= 0.0 && meters <= kBackgroundDepth)) {
            ++out.clamped;
            meters = std::isnan(meters) ? kBackgroundDepth : std::clamp(meters, 0.0, kBackgroundDepth);
        }
        const auto code = static_cast<std::uint32_t>(std::llround(meters / kBackgroundDepth * kMaxCode));
        dst[0] = static_cast<std::uint8_t>(code & 0xFF);
        dst[1] = static_cast<std::uint8_t>((code >> 8) & 0xFF);
        dst[2] = static_cast<std::uint8_t>((code >> 16) & 0xFF);
        if (channels == 4) {
            dst[3] = 255;
        }
        dst += channels;
    }
    return out;
}

std::vector<std::uint8_t> instance_from_raycast(const WorldState& w, const CameraRaycast& rc) {
    std::vector<std::uint8_t> out(rc.actor_index.size() * 4, 0);
    for (std::size_t i = 0; i < rc.actor_index.size(); ++i) {
        std::uint8_t* px = &out[i * 4];
        px[3] = 255;
        const auto index = rc.actor_index[i];
        if (index < 0) {
            continue;
        }
        const auto& a = w.actors[static_cast<std::size_t>(index)];
        px[0] = static_cast<std::uint8_t>(a.cls);
        px[1] = static_cast<std::uint8_t>(a.actor_id & 0xFF);
        px[2] = static_cast<std::uint8_t>((a.actor_id >> 8) & 0xFF);
    }
    return out;
}

std::vector<std::uint8_t> render_instance(const WorldState& w, const SensorSpec& cam) {
    return instance_from_raycast(w, cast_camera(w, cam));
}

std::vector<std::uint8_t> rgb_from_raycast(const WorldState& w, const CameraRaycast& rc) {
    std::vector<std::array<std::uint8_t, 4>> palette(w.actors.size());
    for (std::size_t i = 0; i < w.actors.size(); ++i) {
        const std::uint64_t bits = derive_seed(w.seed, 0xC0102ULL + w.actors[i].actor_id);
        palette[i] = {static_cast<std::uint8_t>(64 + (bits & 0xBF)), static_cast<std::uint8_t>(64 + ((bits >> 8) & 0xBF)),
                      static_cast<std::uint8_t>(64 + ((bits >> 16) & 0xBF)), 255};
    }
    std::vector<std::uint8_t> out(rc.actor_index.size() * 4);
    for (int v = 0; v < rc.height; ++v) {
        // Sky above the horizon row, road below.
        const std::array<std::uint8_t, 4> background =
            v < rc.height / 2 ? std::array<std::uint8_t, 4>{135, 180, 230, 255}
                              : std::array<std::uint8_t, 4>{70, 70, 75, 255};
        for (int u = 0; u < rc.width; ++u) {
            const std::size_t i = static_cast<std::size_t>(v) * rc.width + u;
            const auto index = rc.actor_index[i];
            const auto& color = index < 0 ? background : palette[static_cast<std::size_t>(index)];
            std::copy(color.begin(), color.end(), out.begin() + static_cast<std::ptrdiff_t>(i * 4));
        }
    }
    return out;
}

int lidar_columns(const SensorSpec& spec, int fps) {
    return static_cast<int>(spec.points_per_second / (static_cast<std::int64_t>(spec.channels) * fps));
}

double lidar_elevation_deg(const SensorSpec& spec, int row) {
    if (spec.channels <= 1) {
        return 0.0;
    }
    return kLidarUpperFovDeg - row * (kLidarUpperFovDeg - kLidarLowerFovDeg) / (spec.channels - 1);
}

LidarScan simulate_lidar(const WorldState& w, const SensorSpec& spec) {
    const RigidTransform sensor = sensor_to_world(w, spec);
    const auto boxes = prepare_boxes(w, sensor);
    const int columns = lidar_columns(spec, w.fps);
    LidarScan scan;
    for (int row = 0; row < spec.channels; ++row) {
        const double elevation = lidar_elevation_deg(spec, row) * kDegToRad;
        for (int col = 0; col < columns; ++col) {
            const double azimuth = 2.0 * kPi * col / columns;
            const Vec3 dir{std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                           std::sin(elevation)};
            double best = std::numeric_limits<double>::infinity();
            std::int32_t best_index = -1;
            for (const auto& box : boxes) {
                const auto t = slab(box.origin_local, box.to_local * dir, box.extent);
                if (t && *t < best) {
                    best = *t;
                    best_index = box.index;
                }
            }
            if (best_index < 0 || best > spec.range_m) {
                continue;
            }
            const Vec3 hit = dir * best;
            scan.points.push_back({static_cast<float>(hit.x), static_cast<float>(hit.y), static_cast<float>(hit.z),
                                   w.actors[static_cast<std::size_t>(best_index)].actor_id});
        }
    }
    return scan;
}

ImuReading sample_imu(const ActorState& prev, const ActorState& cur, double dt) {
    const Vec3 accel_world = (cur.world_velocity() - prev.world_velocity()) * (1.0 / dt);
    const Mat3 to_ego = rotation_matrix(cur.pose.rotation).transposed();
    ImuReading r;
    r.accelerometer = to_ego * (accel_world + Vec3{0.0, 0.0, -kGravity});
    r.gyroscope = {0.0, 0.0, cur.yaw_rate};
    r.compass_deg = cur.pose.rotation.yaw;
    return r;
}

GnssReading sample_gnss(const ActorState& ego) {
    return {kGnssOriginLat + ego.pose.location.x / kMetersPerDegree,
            kGnssOriginLon + ego.pose.location.y / kMetersPerDegree, ego.pose.location.z};
}

}  // namespace simsync
