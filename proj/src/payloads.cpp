#include "simsync/payloads.hpp"

#include "simsync/bytes.hpp"

namespace simsync {

std::size_t image_frame_size(const SensorSpec& spec) {
    return static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height) * kImageChannels;
}

std::vector<std::uint8_t> encode_lidar(const LidarScan& scan) {
    std::vector<std::uint8_t> out;
    out.reserve(scan.points.size() * kLidarRecordSize);
    ByteWriter w(out);
    for (const auto& p : scan.points) {
        w.f32(p.x);
        w.f32(p.y);
        w.f32(p.z);
        w.u32(p.actor_id);
    }
    return out;
}

LidarScan decode_lidar(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % kLidarRecordSize != 0) {
        throw DecodeError("lidar payload is not a whole number of 16-byte records");
    }
    LidarScan scan;
    scan.points.reserve(bytes.size() / kLidarRecordSize);
    ByteReader r(bytes);
    while (r.remaining() > 0) {
        LidarPoint p;
        p.x = r.f32();
        p.y = r.f32();
        p.z = r.f32();
        p.actor_id = r.u32();
        scan.points.push_back(p);
    }
    return scan;
}

std::vector<std::uint8_t> encode_imu(const ImuReading& imu) {
    std::vector<std::uint8_t> out;
    ByteWriter w(out);
    for (double v : {imu.accelerometer.x, imu.accelerometer.y, imu.accelerometer.z, imu.gyroscope.x,
                     imu.gyroscope.y, imu.gyroscope.z, imu.compass_deg}) {
        w.f64(v);
    }
    return out;
}

ImuReading decode_imu(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kImuRecordSize) {
        throw DecodeError("imu payload must be 56 bytes");
    }
    ByteReader r(bytes);
    ImuReading imu;
    imu.accelerometer = {r.f64(), r.f64(), r.f64()};
    imu.gyroscope = {r.f64(), r.f64(), r.f64()};
    imu.compass_deg = r.f64();
    return imu;
}

std::vector<std::uint8_t> encode_gnss(const GnssReading& g) {
    std::vector<std::uint8_t> out;
    ByteWriter w(out);
    w.f64(g.latitude);
    w.f64(g.longitude);
    w.f64(g.altitude);
    return out;
}

GnssReading decode_gnss(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kGnssRecordSize) {
        throw DecodeError("gnss payload must be 24 bytes");
    }
    ByteReader r(bytes);
    GnssReading g;
    g.latitude = r.f64();
    g.longitude = r.f64();
    g.altitude = r.f64();
    return g;
}

std::vector<std::uint8_t> render_sensor(const WorldState& w, const ActorState& prev_ego, const SensorSpec& spec,
                                        double dt) {
    switch (spec.kind) {
        case SensorKind::Rgb: return rgb_from_raycast(w, cast_camera(w, spec));
        case SensorKind::Depth: return encode_depth_rgb(render_depth(w, spec), kImageChannels).bytes;
        case SensorKind::Instance: return render_instance(w, spec);
        case SensorKind::Lidar: return encode_lidar(simulate_lidar(w, spec));
        case SensorKind::Imu: return encode_imu(sample_imu(prev_ego, w.ego(), dt));
        case SensorKind::Gnss: return encode_gnss(sample_gnss(w.ego()));
    }
    return {};
}

}  // namespace simsync
