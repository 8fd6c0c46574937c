#pragma once

// Raw payload layouts carried in SENSOR_PAYLOAD bodies and stored verbatim.
//   rgb, instance   width * height * 4 bytes, row-major RGBA
//   depth           width * height * 4 bytes: 24-bit depth code (R low, G, B high) + pad 255
//   lidar           n x { f32 x, f32 y, f32 z, u32 actor_id }, little-endian, sensor frame
//   imu             7 x f64: accel xyz (m/s^2), gyro xyz (deg/s), compass (deg)
//   gnss            3 x f64: latitude, longitude, altitude

#include <cstdint>
#include <span>
#include <vector>

#include "simsync/config.hpp"
#include "simsync/world.hpp"

namespace simsync {

inline constexpr int kImageChannels = 4;
inline constexpr std::size_t kLidarRecordSize = 16;
inline constexpr std::size_t kImuRecordSize = 7 * 8;
inline constexpr std::size_t kGnssRecordSize = 3 * 8;

std::size_t image_frame_size(const SensorSpec& spec);

std::vector<std::uint8_t> encode_lidar(const LidarScan& scan);
LidarScan decode_lidar(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_imu(const ImuReading& r);
ImuReading decode_imu(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_gnss(const GnssReading& r);
GnssReading decode_gnss(std::span<const std::uint8_t> bytes);

// Renders one sensor for the given world state. `prev_ego` feeds the IMU's
// finite difference; dt is the fixed timestep.
std::vector<std::uint8_t> render_sensor(const WorldState& w, const ActorState& prev_ego, const SensorSpec& spec,
                                        double dt);

}  // namespace simsync
