#pragma once

// Shared fixtures for the test suites: small run configs and scratch directories.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include <future>

#include "simsync/config.hpp"
#include "simsync/pipeline.hpp"
#include "simsync/server.hpp"
#include "simsync/transport.hpp"

namespace simsync::fixtures {

namespace fs = std::filesystem;

// A unique directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("simsync_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline SensorSpec camera(const std::string& id, SensorKind kind, int width, int height, int lag = 0) {
    SensorSpec s;
    s.sensor_id = id;
    s.kind = kind;
    s.width = width;
    s.height = height;
    s.fov_deg = 90.0;
    s.mount_pose.location = {0.5, 0.0, 1.7};
    s.lag_frames = lag;
    return s;
}

inline SensorSpec lidar(const std::string& id, int lag = 0) {
    SensorSpec s;
    s.sensor_id = id;
    s.kind = SensorKind::Lidar;
    s.mount_pose.location = {0.0, 0.0, 2.4};
    s.channels = 16;
    s.points_per_second = 16 * 30 * 90;
    s.range_m = 60.0;
    s.lag_frames = lag;
    return s;
}

inline SensorSpec simple_sensor(const std::string& id, SensorKind kind, int lag = 0) {
    SensorSpec s;
    s.sensor_id = id;
    s.kind = kind;
    s.lag_frames = lag;
    return s;
}

// A small but complete run: rgb, depth, lidar, imu, gnss at 96x64.
inline RunConfig small_config(int frames = 30, std::uint64_t seed = 11) {
    RunConfig cfg;
    cfg.fps = 30;
    cfg.duration_s = frames / 30.0;
    cfg.image_width = 96;
    cfg.image_height = 64;
    cfg.num_vehicles = 6;
    cfg.num_pedestrians = 6;
    cfg.seed = seed;
    cfg.save_vehicle_gt = true;
    cfg.save_pedestrian_gt = true;
    cfg.sensors = {camera("rgb0", SensorKind::Rgb, 96, 64), camera("depth0", SensorKind::Depth, 96, 64),
                   lidar("lidar0"), simple_sensor("imu0", SensorKind::Imu), simple_sensor("gnss0", SensorKind::Gnss)};
    return cfg;
}

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_file_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs one episode against an in-process server thread over a socket pair.
inline EpisodeReport run_with_server(const RunConfig& cfg, CollectMode mode, const fs::path& out,
                                     ServerOptions server_options = {}, std::size_t workers = 2) {
    const auto valid = require_valid(cfg);
    auto [client, server_conn] = connection_pair();
    if (server_options.render_workers == 0) {
        server_options.render_workers = 2;
    }
    auto server = std::async(std::launch::async, [&, server_options] {
        SimServer s(valid, server_options);
        return s.serve_connection(server_conn, 1);
    });
    CollectOptions options;
    options.mode = mode;
    options.workers = workers;
    options.output_dir = out;
    EpisodeReport report = run_episode(valid, client, 1, options);
    client.shutdown_write();
    server.get();
    return report;
}

}  // namespace simsync::fixtures
