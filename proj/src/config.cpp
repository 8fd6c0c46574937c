#include "simsync/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "simsync/rng.hpp"

namespace simsync {

using json = nlohmann::json;

namespace {

const std::set<std::string> kTopLevelKeys = {
    "map_id",         "episodes",          "num_vehicles",     "num_pedestrians",
    "save_vehicle_gt", "save_pedestrian_gt", "duration_s",      "fps",
    "image_width",    "image_height",      "max_distance_m",   "min_lidar_points",
    "ego_type",       "weather",           "capture_every_step", "save_ego_motion",
    "seed",           "sensors",           "max_substep_dt_s", "max_substeps",
    "sensor_lag_frames", "max_lag_frames", "in_flight_ticks",  "output_dir"};

const std::set<std::string> kSensorKeys = {
    "sensor_id", "kind", "mount_pose", "fov_deg", "width", "height", "channels",
    "rotation_hz", "points_per_second", "range_m", "lag_frames"};

const std::set<std::string> kPoseKeys = {"x", "y", "z", "roll", "pitch", "yaw"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

std::int64_t read_integer(const json& j, const std::string& name) {
    if (!j.is_number_integer()) {
        throw ConfigError(name + " must be an integer");
    }
    return j.get<std::int64_t>();
}

int read_int(const json& obj, const std::string& name, int fallback) {
    if (!obj.contains(name)) {
        return fallback;
    }
    const auto value = read_integer(obj.at(name), name);
    if (value < std::numeric_limits<int>::min() || value > std::numeric_limits<int>::max()) {
        throw ConfigError(name + " is out of range");
    }
    return static_cast<int>(value);
}

int read_positive_int(const json& obj, const std::string& name, int fallback) {
    const int value = read_int(obj, name, fallback);
    if (value <= 0) {
        throw ConfigError(name + " must be positive");
    }
    return value;
}

int read_non_negative_int(const json& obj, const std::string& name, int fallback) {
    const int value = read_int(obj, name, fallback);
    if (value < 0) {
        throw ConfigError(name + " must be non-negative");
    }
    return value;
}

double read_number(const json& obj, const std::string& name, double fallback) {
    if (!obj.contains(name)) {
        return fallback;
    }
    const auto& j = obj.at(name);
    if (!j.is_number()) {
        throw ConfigError(name + " must be a number");
    }
    const double value = j.get<double>();
    if (!std::isfinite(value)) {
        throw ConfigError(name + " must be finite");
    }
    return value;
}

double read_positive_number(const json& obj, const std::string& name, double fallback) {
    const double value = read_number(obj, name, fallback);
    if (!(value > 0.0)) {
        throw ConfigError(name + " must be positive");
    }
    return value;
}

bool read_flag(const json& obj, const std::string& name, bool fallback) {
    if (!obj.contains(name)) {
        return fallback;
    }
    if (!obj.at(name).is_boolean()) {
        throw ConfigError(name + " must be a boolean");
    }
    return obj.at(name).get<bool>();
}

std::string read_string(const json& obj, const std::string& name, const std::string& fallback) {
    if (!obj.contains(name)) {
        return fallback;
    }
    if (!obj.at(name).is_string()) {
        throw ConfigError(name + " must be a string");
    }
    return obj.at(name).get<std::string>();
}

std::string resolve_choice(const std::string& value, const std::vector<std::string>& options,
                           std::uint64_t seed, std::uint64_t salt, const std::string& name) {
    if (value == kRandomChoice) {
        SplitMix64 rng(derive_seed(seed, salt));
        return options[rng.below(options.size())];
    }
    if (std::find(options.begin(), options.end(), value) == options.end()) {
        throw ConfigError(name + " '" + value + "' is not a known option");
    }
    return value;
}

Pose parse_pose(const json& j) {
    if (!j.is_object()) {
        throw ConfigError("mount_pose must be an object");
    }
    reject_unknown(j, kPoseKeys, "mount_pose");
    Pose p;
    p.location = {read_number(j, "x", 0.0), read_number(j, "y", 0.0), read_number(j, "z", 0.0)};
    p.rotation = {read_number(j, "roll", 0.0), read_number(j, "pitch", 0.0), read_number(j, "yaw", 0.0)};
    return p;
}

SensorSpec parse_sensor(const json& j, const RunConfig& cfg) {
    if (!j.is_object()) {
        throw ConfigError("each sensor must be an object");
    }
    reject_unknown(j, kSensorKeys, "sensor");
    if (!j.contains("sensor_id")) {
        throw ConfigError("missing required key 'sensor_id' in sensor");
    }
    if (!j.contains("kind")) {
        throw ConfigError("missing required key 'kind' in sensor");
    }
    SensorSpec s;
    s.sensor_id = read_string(j, "sensor_id", "");
    try {
        s.kind = sensor_kind_from_string(read_string(j, "kind", ""));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (j.contains("mount_pose")) {
        s.mount_pose = parse_pose(j.at("mount_pose"));
    }
    s.fov_deg = read_number(j, "fov_deg", s.fov_deg);
    if (is_camera(s.kind)) {
        s.width = read_positive_int(j, "width", cfg.image_width);
        s.height = read_positive_int(j, "height", cfg.image_height);
    } else {
        s.width = read_int(j, "width", 0);
        s.height = read_int(j, "height", 0);
    }
    s.channels = read_int(j, "channels", s.channels);
    s.rotation_hz = read_number(j, "rotation_hz", s.rotation_hz);
    s.points_per_second = read_int(j, "points_per_second", s.points_per_second);
    s.range_m = read_number(j, "range_m", s.range_m);
    s.lag_frames = read_non_negative_int(j, "lag_frames", 0);
    return s;
}

json pose_to_json(const Pose& p) {
    return json{{"x", p.location.x},        {"y", p.location.y},         {"z", p.location.z},
                {"roll", p.rotation.roll}, {"pitch", p.rotation.pitch}, {"yaw", p.rotation.yaw}};
}

json config_to_json(const RunConfig& cfg) {
    json sensors = json::array();
    json lags = json::object();
    for (const auto& s : cfg.sensors) {
        sensors.push_back(json{{"sensor_id", s.sensor_id},
                               {"kind", std::string(to_string(s.kind))},
                               {"mount_pose", pose_to_json(s.mount_pose)},
                               {"fov_deg", s.fov_deg},
                               {"width", s.width},
                               {"height", s.height},
                               {"channels", s.channels},
                               {"rotation_hz", s.rotation_hz},
                               {"points_per_second", s.points_per_second},
                               {"range_m", s.range_m},
                               {"lag_frames", s.lag_frames}});
        lags[s.sensor_id] = s.lag_frames;
    }
    return json{{"map_id", cfg.map_id},
                {"episodes", cfg.episodes},
                {"num_vehicles", cfg.num_vehicles},
                {"num_pedestrians", cfg.num_pedestrians},
                {"save_vehicle_gt", cfg.save_vehicle_gt},
                {"save_pedestrian_gt", cfg.save_pedestrian_gt},
                {"duration_s", cfg.duration_s},
                {"fps", cfg.fps},
                {"image_width", cfg.image_width},
                {"image_height", cfg.image_height},
                {"max_distance_m", cfg.max_distance_m},
                {"min_lidar_points", cfg.min_lidar_points},
                {"ego_type", cfg.ego_type},
                {"weather", cfg.weather},
                {"capture_every_step", cfg.capture_every_step},
                {"save_ego_motion", cfg.save_ego_motion},
                {"seed", cfg.seed},
                {"sensors", sensors},
                {"max_substep_dt_s", cfg.max_substep_dt_s},
                {"max_substeps", cfg.max_substeps},
                {"sensor_lag_frames", lags},
                {"max_lag_frames", cfg.max_lag_frames},
                {"in_flight_ticks", cfg.in_flight_ticks},
                {"output_dir", cfg.output_dir}};
}

}  // namespace

std::string_view to_string(SensorKind kind) {
    switch (kind) {
        case SensorKind::Rgb: return "rgb";
        case SensorKind::Depth: return "depth";
        case SensorKind::Instance: return "instance";
        case SensorKind::Lidar: return "lidar";
        case SensorKind::Imu: return "imu";
        case SensorKind::Gnss: return "gnss";
    }
    return "unknown";
}

SensorKind sensor_kind_from_string(std::string_view name) {
    for (auto kind : {SensorKind::Rgb, SensorKind::Depth, SensorKind::Instance, SensorKind::Lidar,
                      SensorKind::Imu, SensorKind::Gnss}) {
        if (to_string(kind) == name) {
            return kind;
        }
    }
    throw std::invalid_argument("unknown sensor kind '" + std::string(name) + "'");
}

bool is_camera(SensorKind kind) {
    return kind == SensorKind::Rgb || kind == SensorKind::Depth || kind == SensorKind::Instance;
}

const std::vector<std::string>& known_maps() {
    static const std::vector<std::string> maps = {"Town01", "Town02", "Town03", "Town04",
                                                  "Town05", "Town06", "Town07", "Town10HD"};
    return maps;
}

const std::vector<std::string>& known_weathers() {
    static const std::vector<std::string> weathers = {
        "ClearNoon",     "CloudyNoon",   "WetNoon",       "WetCloudyNoon", "MidRainyNoon",
        "HardRainNoon",  "SoftRainNoon", "ClearSunset",   "CloudySunset",  "WetSunset",
        "WetCloudySunset", "MidRainSunset", "HardRainSunset", "SoftRainSunset"};
    return weathers;
}

const std::vector<std::string>& known_ego_types() {
    static const std::vector<std::string> types = {"sedan", "suv", "van", "truck"};
    return types;
}

RunConfig parse_run_config(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed document: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ConfigError("malformed document: top level must be an object");
    }
    reject_unknown(doc, kTopLevelKeys, "run config");
    for (const char* required : {"fps", "duration_s", "sensors"}) {
        if (!doc.contains(required)) {
            throw ConfigError(std::string("missing required key '") + required + "'");
        }
    }

    RunConfig cfg;
    cfg.seed = 0;
    if (doc.contains("seed")) {
        const auto& s = doc.at("seed");
        if (s.is_number_unsigned()) {
            cfg.seed = s.get<std::uint64_t>();
        } else if (s.is_number_integer() && s.get<std::int64_t>() >= 0) {
            cfg.seed = static_cast<std::uint64_t>(s.get<std::int64_t>());
        } else {
            throw ConfigError("seed must be a non-negative integer");
        }
    }
    cfg.episodes = read_positive_int(doc, "episodes", cfg.episodes);
    cfg.num_vehicles = read_non_negative_int(doc, "num_vehicles", cfg.num_vehicles);
    cfg.num_pedestrians = read_non_negative_int(doc, "num_pedestrians", cfg.num_pedestrians);
    cfg.save_vehicle_gt = read_flag(doc, "save_vehicle_gt", cfg.save_vehicle_gt);
    cfg.save_pedestrian_gt = read_flag(doc, "save_pedestrian_gt", cfg.save_pedestrian_gt);
    cfg.duration_s = read_positive_number(doc, "duration_s", 0.0);
    cfg.fps = read_positive_int(doc, "fps", 0);
    cfg.image_width = read_positive_int(doc, "image_width", cfg.image_width);
    cfg.image_height = read_positive_int(doc, "image_height", cfg.image_height);
    cfg.max_distance_m = read_positive_number(doc, "max_distance_m", cfg.max_distance_m);
    cfg.min_lidar_points = read_non_negative_int(doc, "min_lidar_points", cfg.min_lidar_points);
    cfg.ego_type = read_string(doc, "ego_type", cfg.ego_type);
    cfg.capture_every_step = read_flag(doc, "capture_every_step", cfg.capture_every_step);
    cfg.save_ego_motion = read_flag(doc, "save_ego_motion", cfg.save_ego_motion);
    cfg.max_substep_dt_s = read_positive_number(doc, "max_substep_dt_s", cfg.max_substep_dt_s);
    cfg.max_substeps = read_positive_int(doc, "max_substeps", cfg.max_substeps);
    cfg.max_lag_frames = read_non_negative_int(doc, "max_lag_frames", cfg.max_lag_frames);
    cfg.in_flight_ticks = read_positive_int(doc, "in_flight_ticks", cfg.in_flight_ticks);
    cfg.output_dir = read_string(doc, "output_dir", cfg.output_dir);

    cfg.map_id = resolve_choice(read_string(doc, "map_id", cfg.map_id), known_maps(), cfg.seed, 1, "map_id");
    cfg.weather =
        resolve_choice(read_string(doc, "weather", cfg.weather), known_weathers(), cfg.seed, 2, "weather");
    if (std::find(known_ego_types().begin(), known_ego_types().end(), cfg.ego_type) == known_ego_types().end()) {
        throw ConfigError("ego_type '" + cfg.ego_type + "' is not a known option");
    }

    const auto& sensors = doc.at("sensors");
    if (!sensors.is_array()) {
        throw ConfigError("sensors must be an array");
    }
    for (const auto& s : sensors) {
        cfg.sensors.push_back(parse_sensor(s, cfg));
    }

    if (doc.contains("sensor_lag_frames")) {
        const auto& lags = doc.at("sensor_lag_frames");
        if (!lags.is_object()) {
            throw ConfigError("sensor_lag_frames must be an object keyed by sensor_id");
        }
        for (const auto& [id, value] : lags.items()) {
            auto it = std::find_if(cfg.sensors.begin(), cfg.sensors.end(),
                                   [&](const SensorSpec& s) { return s.sensor_id == id; });
            if (it == cfg.sensors.end()) {
                throw ConfigError("sensor_lag_frames names unknown sensor '" + id + "'");
            }
            const auto lag = read_integer(value, "sensor_lag_frames." + id);
            if (lag < 0) {
                throw ConfigError("sensor_lag_frames." + id + " must be non-negative");
            }
            it->lag_frames = static_cast<int>(lag);
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    return config_to_json(cfg).dump(2);
}

std::variant<ValidatedConfig, std::vector<std::string>> validate_config(const RunConfig& cfg) {
    std::vector<std::string> errors;
    auto fail = [&](std::string message) { errors.push_back(std::move(message)); };

    if (cfg.fps <= 0) fail("fps must be positive (got " + std::to_string(cfg.fps) + ")");
    if (!(cfg.duration_s > 0.0)) fail("duration_s must be positive");
    if (cfg.fps > 0 && cfg.duration_s > 0.0 && std::llround(cfg.duration_s * cfg.fps) < 1) {
        fail("duration_s * fps must round to at least one frame");
    }
    if (cfg.image_width <= 0) fail("image_width must be positive");
    if (cfg.image_height <= 0) fail("image_height must be positive");
    if (!(cfg.max_distance_m > 0.0)) fail("max_distance_m must be positive");
    if (cfg.episodes <= 0) fail("episodes must be positive");
    if (cfg.num_vehicles < 0) fail("num_vehicles must be non-negative");
    if (cfg.num_pedestrians < 0) fail("num_pedestrians must be non-negative");
    if (cfg.min_lidar_points < 0) fail("min_lidar_points must be non-negative");
    if (static_cast<std::int64_t>(cfg.num_vehicles) + cfg.num_pedestrians + 1 >= 65536) {
        fail("num_vehicles + num_pedestrians + 1 must be below 65536 (actor ids are 16-bit)");
    }
    if (!(cfg.max_substep_dt_s > 0.0)) fail("max_substep_dt_s must be positive");
    if (cfg.max_substeps <= 0) fail("max_substeps must be positive");
    if (cfg.in_flight_ticks <= 0) fail("in_flight_ticks must be positive");
    if (cfg.max_lag_frames < 0) fail("max_lag_frames must be non-negative");
    if (cfg.fps > 0 && cfg.max_substep_dt_s > 0.0 && cfg.max_substeps > 0 &&
        !timestep_feasible(cfg.fps, cfg.max_substep_dt_s, cfg.max_substeps)) {
        std::ostringstream msg;
        msg.precision(17);
        msg << "fixed timestep 1/fps = " << 1.0 / cfg.fps << " s exceeds max_substep_dt_s * max_substeps = "
            << cfg.max_substep_dt_s * cfg.max_substeps << " s";
        fail(msg.str());
    }
    const auto& maps = known_maps();
    if (std::find(maps.begin(), maps.end(), cfg.map_id) == maps.end()) fail("map_id '" + cfg.map_id + "' unknown");
    const auto& weathers = known_weathers();
    if (std::find(weathers.begin(), weathers.end(), cfg.weather) == weathers.end()) {
        fail("weather '" + cfg.weather + "' unknown");
    }
    const auto& egos = known_ego_types();
    if (std::find(egos.begin(), egos.end(), cfg.ego_type) == egos.end()) fail("ego_type '" + cfg.ego_type + "' unknown");

    if (cfg.sensors.empty()) fail("at least one sensor is required");
    std::set<std::string> ids;
    for (const auto& s : cfg.sensors) {
        const std::string where = "sensor '" + s.sensor_id + "': ";
        if (s.sensor_id.empty()) fail("sensor_id must not be empty");
        if (s.sensor_id.size() > 255) fail(where + "sensor_id longer than 255 bytes");
        if (!ids.insert(s.sensor_id).second) fail("duplicate sensor_id '" + s.sensor_id + "'");
        if (s.lag_frames < 0 || s.lag_frames > cfg.max_lag_frames) {
            fail(where + "lag_frames must be in [0, " + std::to_string(cfg.max_lag_frames) + "]");
        }
        if (is_camera(s.kind)) {
            if (!(s.fov_deg > 0.0 && s.fov_deg < 180.0)) fail(where + "fov_deg must be in (0, 180)");
            if (s.width <= 0 || s.height <= 0) fail(where + "camera width and height must be positive");
        }
        if (s.kind == SensorKind::Lidar) {
            if (s.channels <= 0) fail(where + "channels must be positive");
            if (s.points_per_second <= 0) fail(where + "points_per_second must be positive");
            if (!(s.range_m > 0.0)) fail(where + "range_m must be positive");
            if (s.rotation_hz < 0.0) fail(where + "rotation_hz must be non-negative");
            if (cfg.fps > 0 && s.channels > 0 && s.points_per_second / (static_cast<std::int64_t>(s.channels) * cfg.fps) < 1) {
                fail(where + "points_per_second too small for one column per frame");
            }
        }
    }
    if (!errors.empty()) {
        return errors;
    }
    return ValidatedConfig(cfg);
}

ValidatedConfig require_valid(const RunConfig& cfg) {
    auto result = validate_config(cfg);
    if (auto* errors = std::get_if<std::vector<std::string>>(&result)) {
        std::string joined = "invalid run config:";
        for (const auto& e : *errors) {
            joined += "\n  - " + e;
        }
        throw ConfigError(joined);
    }
    return std::get<ValidatedConfig>(std::move(result));
}

TimingPlan derive_timing(const ValidatedConfig& validated) {
    const RunConfig& cfg = validated.get();
    TimingPlan plan;
    plan.fixed_timestep_s = 1.0 / cfg.fps;
    plan.total_frames = std::llround(cfg.duration_s * cfg.fps);
    // Smallest n with dt / n <= msdt. Validation guarantees n <= max_substeps up
    // to rounding; clamp so a last-ulp disagreement cannot exceed the cap.
    int n = std::max(1, static_cast<int>(std::floor(plan.fixed_timestep_s / cfg.max_substep_dt_s)));
    while (n > 1 && within_substep_limit(plan.fixed_timestep_s / (n - 1), cfg.max_substep_dt_s)) {
        --n;
    }
    while (n < cfg.max_substeps && !within_substep_limit(plan.fixed_timestep_s / n, cfg.max_substep_dt_s)) {
        ++n;
    }
    plan.substeps_per_frame = n;
    plan.substep_dt_s = plan.fixed_timestep_s / n;
    return plan;
}

bool within_substep_limit(double dt, double limit) {
    return dt <= limit * (1.0 + kTimestepRelTolerance);
}

bool timestep_feasible(int fps, double max_substep_dt_s, int max_substeps) {
    return within_substep_limit(1.0 / fps, max_substep_dt_s * max_substeps);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_digest(const RunConfig& cfg) {
    RunConfig canonical = cfg;
    canonical.output_dir.clear();
    return fnv1a64(config_to_json(canonical).dump());
}

}  // namespace simsync
