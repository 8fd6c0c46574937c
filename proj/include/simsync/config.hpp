#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "simsync/geometry.hpp"

namespace simsync {

enum class SensorKind : std::uint8_t { Rgb = 1, Depth = 2, Instance = 3, Lidar = 4, Imu = 5, Gnss = 6 };

std::string_view to_string(SensorKind kind);
SensorKind sensor_kind_from_string(std::string_view name);
bool is_camera(SensorKind kind);

struct SensorSpec {
    std::string sensor_id;
    SensorKind kind = SensorKind::Rgb;
    Pose mount_pose;  // relative to the ego vehicle
    double fov_deg = 90.0;
    int width = 0;   // cameras only; 0 before defaults are applied
    int height = 0;
    int channels = 32;  // lidar beam count
    double rotation_hz = 0.0;  // 0 means one revolution per frame
    int points_per_second = 100000;
    double range_m = 100.0;
    int lag_frames = 0;

    bool operator==(const SensorSpec&) const = default;
};

inline constexpr std::string_view kRandomChoice = "random";

// The option lists the collector accepts for map, weather and ego type.
const std::vector<std::string>& known_maps();
const std::vector<std::string>& known_weathers();
const std::vector<std::string>& known_ego_types();

struct RunConfig {
    std::string map_id = "Town01";
    int episodes = 1;
    int num_vehicles = 50;
    int num_pedestrians = 50;
    bool save_vehicle_gt = false;
    bool save_pedestrian_gt = false;
    double duration_s = 0.0;
    int fps = 0;
    int image_width = 1280;
    int image_height = 720;
    double max_distance_m = 50.0;
    int min_lidar_points = 0;
    std::string ego_type = "sedan";
    std::string weather = "ClearNoon";
    bool capture_every_step = true;
    bool save_ego_motion = true;
    std::uint64_t seed = 0;
    std::vector<SensorSpec> sensors;
    double max_substep_dt_s = 1.0 / 120.0;
    int max_substeps = 10;
    int max_lag_frames = 8;
    int in_flight_ticks = 1;
    std::string output_dir = "out";

    bool operator==(const RunConfig&) const = default;
};

struct TimingPlan {
    double fixed_timestep_s = 0.0;
    std::int64_t total_frames = 0;
    int substeps_per_frame = 1;
    double substep_dt_s = 0.0;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A RunConfig that passed validate_config. Only validate_config constructs one.
class ValidatedConfig {
public:
    const RunConfig& get() const { return cfg_; }
    const RunConfig* operator->() const { return &cfg_; }

private:
    friend std::variant<ValidatedConfig, std::vector<std::string>> validate_config(const RunConfig&);
    explicit ValidatedConfig(RunConfig cfg) : cfg_(std::move(cfg)) {}
    RunConfig cfg_;
};

// Parses a JSON run configuration. Unknown keys, missing required keys
// (fps, duration_s, sensors) and ill-typed values throw ConfigError.
// "random" map/weather choices are resolved from the seed here.
RunConfig parse_run_config(std::string_view document);
RunConfig load_run_config(const std::string& path);

// Canonical JSON form. parse_run_config(serialize_config(c)) == c for resolved configs.
std::string serialize_config(const RunConfig& cfg);

// Returns every violated constraint, or the validated config.
std::variant<ValidatedConfig, std::vector<std::string>> validate_config(const RunConfig& cfg);

// Throws ConfigError listing every violation.
ValidatedConfig require_valid(const RunConfig& cfg);

TimingPlan derive_timing(const ValidatedConfig& cfg);

// Relative slack on the timestep bound. 1/fps and msdt * ms are each rounded,
// so an exact equality such as 1/30 = 4 * (1/120) can land a few ulps apart.
inline constexpr double kTimestepRelTolerance = 1e-12;
// dt <= limit up to kTimestepRelTolerance.
bool within_substep_limit(double dt, double limit);
// 1/fps <= max_substep_dt_s * max_substeps.
bool timestep_feasible(int fps, double max_substep_dt_s, int max_substeps);

// 64-bit FNV-1a of the canonical serialization with output_dir blanked.
std::uint64_t config_digest(const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace simsync
