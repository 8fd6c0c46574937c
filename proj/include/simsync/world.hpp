#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "simsync/config.hpp"
#include "simsync/geometry.hpp"

namespace simsync {

enum class ActorClass : std::uint8_t { Ego = 0, Vehicle = 1, Pedestrian = 2 };

std::string_view to_string(ActorClass cls);

inline constexpr double kMaxVehicleSpeed = 30.0;
inline constexpr double kMaxPedestrianSpeed = 3.0;
inline constexpr double kBackgroundDepth = 1000.0;
inline constexpr std::uint32_t kMaxActorId = 0xFFFF;

struct ActorState {
    std::uint32_t actor_id = 0;
    ActorClass cls = ActorClass::Vehicle;
    Pose pose;               // world frame
    Vec3 velocity;           // body frame, m/s
    double yaw_rate = 0.0;   // deg/s
    Vec3 extent;             // half dimensions

    OrientedBox box() const { return {pose.location, extent, pose.rotation}; }
    Vec3 world_velocity() const;
    bool operator==(const ActorState&) const = default;
};

struct WorldState {
    std::int64_t frame_id = 0;  // 0 right after spawn; the first tick produces frame 1
    double sim_time_s = 0.0;
    int fps = 1;
    std::uint64_t seed = 0;
    std::vector<ActorState> actors;
    std::uint32_t ego_id = 0;
    std::string weather;
    double half_size_m = 60.0;

    const ActorState& ego() const;
    bool operator==(const WorldState&) const = default;
};

struct WorldParams {
    double half_size_m = 60.0;
    int max_spawn_attempts = 10000;
};

class SpawnError : public std::runtime_error {
public:
    explicit SpawnError(const std::string& what) : std::runtime_error(what) {}
};

// num_vehicles + num_pedestrians + 1 actors: the ego (id 1) at the origin,
// then vehicles, then pedestrians, placed by rejection sampling.
WorldState spawn_world(const ValidatedConfig& cfg, std::uint64_t seed, const WorldParams& params = {});

WorldState step_world(const WorldState& w, const TimingPlan& plan);

// World transform of a sensor rigidly mounted on the ego.
RigidTransform sensor_to_world(const WorldState& w, const SensorSpec& spec);

struct DepthImage {
    int width = 0;
    int height = 0;
    std::vector<double> meters;  // row-major, background = kBackgroundDepth

    double at(int u, int v) const { return meters[static_cast<std::size_t>(v) * width + u]; }
};

// One shared ray cast per camera so depth and instance rasters always agree.
struct CameraRaycast {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::int32_t> actor_index;  // index into WorldState::actors, -1 for background
};

CameraRaycast cast_camera(const WorldState& w, const SensorSpec& cam);

DepthImage render_depth(const WorldState& w, const SensorSpec& cam);
DepthImage depth_from_raycast(const CameraRaycast& rc);

struct EncodedDepth {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> bytes;
    std::size_t clamped = 0;
};

// code = round(d / 1000 * (2^24 - 1)); R = low byte, G = middle, B = high.
// With channels == 4 a fourth pad byte of 255 follows each pixel.
EncodedDepth encode_depth_rgb(const DepthImage& d, int channels = 3);

// 4 channels: class tag, actor_id low byte, actor_id high byte, 255.
std::vector<std::uint8_t> render_instance(const WorldState& w, const SensorSpec& cam);
std::vector<std::uint8_t> instance_from_raycast(const WorldState& w, const CameraRaycast& rc);

// RGBA raster: the instance raster recolored with a seeded per-actor palette.
std::vector<std::uint8_t> rgb_from_raycast(const WorldState& w, const CameraRaycast& rc);

struct LidarPoint {
    float x = 0.0F;
    float y = 0.0F;
    float z = 0.0F;
    std::uint32_t actor_id = 0;

    bool operator==(const LidarPoint&) const = default;
};

struct LidarScan {
    std::vector<LidarPoint> points;  // sensor frame, hits only
};

inline constexpr double kLidarUpperFovDeg = 10.0;
inline constexpr double kLidarLowerFovDeg = -30.0;

int lidar_columns(const SensorSpec& spec, int fps);
// Elevation of beam `row` in degrees, evenly spaced from the upper to the lower fov.
double lidar_elevation_deg(const SensorSpec& spec, int row);
LidarScan simulate_lidar(const WorldState& w, const SensorSpec& spec);

struct ImuReading {
    Vec3 accelerometer;  // m/s^2, ego frame
    Vec3 gyroscope;      // deg/s, ego frame
    double compass_deg = 0.0;
};

struct GnssReading {
    double latitude = 0.0;
    double longitude = 0.0;
    double altitude = 0.0;
};

inline constexpr double kGnssOriginLat = 0.0;
inline constexpr double kGnssOriginLon = 0.0;
inline constexpr double kMetersPerDegree = 111319.49079327357;  // equatorial chart scale
inline constexpr double kGravity = 9.81;

ImuReading sample_imu(const ActorState& prev, const ActorState& cur, double dt);
GnssReading sample_gnss(const ActorState& ego);

}  // namespace simsync
