#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "simsync/payloads.hpp"
#include "simsync/png_io.hpp"
#include "simsync/protocol.hpp"
#include "simsync/rng.hpp"
#include "simsync/store.hpp"
#include "test_support.hpp"

using namespace simsync;
using fixtures::ScratchDir;

namespace {

std::vector<std::uint8_t> frame_pattern(std::size_t size, std::int64_t frame) {
    std::vector<std::uint8_t> out(size);
    for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<std::uint8_t>((i * 7 + frame * 13) & 0xff);
    return out;
}

}  // namespace

TEST(StoreSizes, BatchArithmetic) {
    const auto hd = fixtures::camera("cam", SensorKind::Rgb, 1280, 720);
    // 1280 * 720 * 4 bytes per frame, 30 frames per one-second batch.
    EXPECT_EQ(image_frame_size(hd), 3686400u);
    EXPECT_EQ(batch_file_size(hd, 30), 110592000u);
    EXPECT_EQ(batch_capacity_frames(30), 30);
    const auto tiny = fixtures::camera("cam", SensorKind::Rgb, 2, 2);
    EXPECT_EQ(batch_file_size(tiny, 1), 16u);
}

TEST(StoreBatch, FileSizesMatchOnDisk) {
    ScratchDir dir("sizes");
    for (auto [w, h, fps] : {std::tuple{1280, 720, 30}, std::tuple{640, 360, 20}, std::tuple{2, 2, 1}}) {
        const auto spec = fixtures::camera("cam_" + std::to_string(w), SensorKind::Rgb, w, h);
        std::vector<BatchInfo> closed;
        {
            BatchWriter writer(dir.path(), spec, fps, [&](const BatchInfo& b) { closed.push_back(b); });
            writer.append_frame(1, frame_pattern(image_frame_size(spec), 1));
            EXPECT_EQ(fs::file_size(writer.current_path()), static_cast<std::uintmax_t>(w) * h * 4 * fps);
            writer.close();
        }
        ASSERT_EQ(closed.size(), 1u);
        EXPECT_EQ(fs::file_size(dir.path() / closed[0].file), static_cast<std::uintmax_t>(w) * h * 4 * fps);
    }
}

TEST(StoreBatch, RotationAndOffsets) {
    ScratchDir dir("rotate");
    const auto spec = fixtures::camera("cam", SensorKind::Rgb, 4, 3);
    const std::size_t size = image_frame_size(spec);
    std::vector<BatchInfo> closed;
    {
        BatchWriter writer(dir.path(), spec, 30, [&](const BatchInfo& b) { closed.push_back(b); });
        for (std::int64_t f = 1; f <= 31; ++f) {
            if (f == 5) continue;  // a skipped frame leaves its slot untouched
            writer.append_frame(f, frame_pattern(size, f));
        }
        ASSERT_EQ(closed.size(), 1u);  // frame 31 opened batch 1
        EXPECT_EQ(writer.current_path().filename(), "batch_000001.bin");
        writer.close();
    }
    ASSERT_EQ(closed.size(), 2u);
    EXPECT_EQ(closed[0].file, "raw/cam/batch_000000.bin");
    EXPECT_EQ(closed[0].first_frame, 1);
    EXPECT_EQ(closed[0].last_frame, 30);
    EXPECT_EQ(closed[0].frames.size(), 29u);
    EXPECT_EQ(closed[1].batch_index, 1);
    EXPECT_EQ(closed[1].first_frame, 31);
    EXPECT_EQ(closed[1].frames, std::vector<std::int64_t>{31});

    const auto b0 = fixtures::read_file_bytes(dir.path() / closed[0].file);
    for (std::int64_t f = 1; f <= 30; ++f) {
        const std::vector<std::uint8_t> slice(b0.begin() + (f - 1) * size, b0.begin() + f * size);
        if (f == 5) {
            EXPECT_EQ(slice, std::vector<std::uint8_t>(size, 0));
        } else {
            EXPECT_EQ(slice, frame_pattern(size, f)) << f;
        }
    }
    const auto b1 = fixtures::read_file_bytes(dir.path() / closed[1].file);
    EXPECT_EQ(std::vector<std::uint8_t>(b1.begin(), b1.begin() + size), frame_pattern(size, 31));
}

TEST(StoreBatch, RejectsBadInput) {
    ScratchDir dir("bad");
    const auto spec = fixtures::camera("cam", SensorKind::Rgb, 4, 3);
    BatchWriter writer(dir.path(), spec, 10);
    EXPECT_THROW(writer.append_frame(1, std::vector<std::uint8_t>(10)), StoreError);
    writer.append_frame(2, frame_pattern(image_frame_size(spec), 2));
    EXPECT_THROW(writer.append_frame(2, frame_pattern(image_frame_size(spec), 2)), StoreError);
    EXPECT_THROW(writer.append_frame(1, frame_pattern(image_frame_size(spec), 1)), StoreError);
    writer.close();
    // A second writer for the same sensor must not clobber the existing batch.
    EXPECT_THROW(BatchWriter(dir.path(), spec, 10), StoreError);
    EXPECT_THROW(BatchWriter(dir.path(), fixtures::simple_sensor("imu", SensorKind::Imu), 10), StoreError);
}

TEST(StoreBatch, EmptyBatchIsRemovedAndNotRegistered) {
    ScratchDir dir("empty");
    int registered = 0;
    fs::path path;
    {
        BatchWriter writer(dir.path(), fixtures::camera("cam", SensorKind::Rgb, 4, 3), 10,
                           [&](const BatchInfo&) { ++registered; });
        path = writer.current_path();
        EXPECT_TRUE(fs::exists(path));
    }
    EXPECT_EQ(registered, 0);
    EXPECT_FALSE(fs::exists(path));
}

TEST(StoreLog, AppendAndScan) {
    ScratchDir dir("log");
    const fs::path p = dir / "imu.log";
    {
        RecordLog log(p);
        log.append_record(1, std::vector<std::uint8_t>{1, 2, 3});
        log.append_record(2, std::vector<std::uint8_t>{});
        log.append_record(5, std::vector<std::uint8_t>(1000, 9));
        EXPECT_EQ(log.frames(), (std::vector<std::int64_t>{1, 2, 5}));
        EXPECT_THROW(log.append_record(5, std::vector<std::uint8_t>{1}), StoreError);
        log.close();
    }
    // Record layout: u64 frame id, u32 length, bytes.
    EXPECT_EQ(fs::file_size(p), (12u + 3) + 12u + (12u + 1000));
    const auto raw = fixtures::read_file_bytes(p);
    EXPECT_EQ(raw[0], 1);
    EXPECT_EQ(raw[8], 3);
    const auto scan = scan_record_log(p);
    EXPECT_FALSE(scan.truncated_tail);
    ASSERT_EQ(scan.records.size(), 3u);
    EXPECT_EQ(scan.records[0].bytes, (std::vector<std::uint8_t>{1, 2, 3}));
    EXPECT_TRUE(scan.records[1].bytes.empty());
    EXPECT_EQ(scan.records[2].frame_id, 5);
}

TEST(StoreLog, TruncatedTailIsReportedNotThrown) {
    ScratchDir dir("trunc");
    const fs::path p = dir / "x.log";
    {
        RecordLog log(p);
        log.append_record(1, std::vector<std::uint8_t>(20, 1));
        log.append_record(2, std::vector<std::uint8_t>(20, 2));
    }
    const auto full = fs::file_size(p);
    for (std::uintmax_t cut : {full - 1, full - 20, full - 25}) {
        fs::resize_file(p, cut);
        const auto scan = scan_record_log(p);
        EXPECT_TRUE(scan.truncated_tail) << cut;
        ASSERT_EQ(scan.records.size(), 1u);
        EXPECT_EQ(scan.records[0].bytes, std::vector<std::uint8_t>(20, 1));
        EXPECT_EQ(scan.valid_bytes, 32u);
    }
    fs::resize_file(p, 0);
    EXPECT_TRUE(scan_record_log(p).records.empty());
    EXPECT_FALSE(scan_record_log(p).truncated_tail);
}

TEST(StoreManifest, JsonRoundTrip) {
    Manifest m;
    m.config_json = serialize_config(fixtures::small_config());
    m.episode = 3;
    m.world_seed = 0xfedcba9876543210ULL;
    m.frames_requested = 60;
    m.frames_assembled = 59;
    SensorManifest cam{"cam0", SensorKind::Rgb, 4, 3, 4, 48, 30, {}, "", {}};
    cam.batches.push_back({"raw/cam0/batch_000000.bin", 0, 1, 30, {1, 2, 3}});
    SensorManifest imu{"imu0", SensorKind::Imu, 0, 0, 0, 0, 0, {}, "logs/imu0.log", {1, 2, 3}};
    m.sensors = {cam, imu};
    m.logs = {{"ego_motion", "logs/ego_motion.log"}};
    m.skips = {{7, "missing sensor", "cam0:8"}};
    m.labels = {{"depth0", {1, 2}}};
    EXPECT_EQ(manifest_from_json(manifest_to_json(m)), m);
    EXPECT_THROW(manifest_from_json("{}"), StoreError);
    EXPECT_THROW(manifest_from_json("not json"), StoreError);
    EXPECT_EQ(cam.stored_frames(), 3);
}

TEST(StoreManifest, AtomicWriteReplacesContents) {
    ScratchDir dir("atomic");
    write_file_atomic(dir / "a.json", "one");
    write_file_atomic(dir / "a.json", "two");
    EXPECT_EQ(fixtures::read_file_text(dir / "a.json"), "two");
    EXPECT_FALSE(fs::exists(dir / "a.json.tmp"));
}

TEST(StoreDepth, MillimetreConversion) {
    bool clamped = false;
    // (255, 255, 255) decodes to exactly 1000 m = 1,000,000 mm, beyond 16 bits.
    EXPECT_EQ(depth_to_millimeters(1000.0, &clamped), 65535);
    EXPECT_TRUE(clamped);
    clamped = false;
    EXPECT_EQ(depth_to_millimeters(12.3456, &clamped), 12346);
    EXPECT_FALSE(clamped);
    EXPECT_EQ(depth_to_millimeters(65.535, &clamped), 65535);
    EXPECT_FALSE(clamped);
    EXPECT_EQ(depth_to_millimeters(0.0, &clamped), 0);
}

// A hand-built episode: two camera batches, a lidar log, an imu log and a
// snapshot log, converted and checked against the raw inputs.
TEST(StoreConvert, OutputsMatchRawInputsAndAreIdempotent) {
    ScratchDir dir("convert");
    const fs::path ep = dir.path();
    const auto rgb = fixtures::camera("rgb0", SensorKind::Rgb, 5, 3);
    const auto depth = fixtures::camera("depth0", SensorKind::Depth, 5, 3);
    const int fps = 2;
    const std::size_t size = image_frame_size(rgb);

    Manifest m;
    m.config_json = "{}";
    m.episode = 1;
    SensorManifest rgb_m{"rgb0", SensorKind::Rgb, 5, 3, 4, size, fps, {}, "", {}};
    SensorManifest depth_m{"depth0", SensorKind::Depth, 5, 3, 4, size, fps, {}, "", {}};
    std::map<std::int64_t, std::vector<std::uint8_t>> rgb_frames;
    std::map<std::int64_t, std::vector<std::uint8_t>> depth_frames;
    {
        BatchWriter rw(ep, rgb, fps, [&](const BatchInfo& b) { rgb_m.batches.push_back(b); });
        BatchWriter dw(ep, depth, fps, [&](const BatchInfo& b) { depth_m.batches.push_back(b); });
        SplitMix64 rng(3);
        for (std::int64_t f = 1; f <= 3; ++f) {
            rgb_frames[f] = frame_pattern(size, f);
            rw.append_frame(f, rgb_frames[f]);
            DepthImage d{5, 3, {}};
            for (int i = 0; i < 15; ++i) d.meters.push_back(rng.uniform(0.0, 60.0));
            d.meters[0] = 1000.0;  // background: clamps in the millimetre image
            depth_frames[f] = encode_depth_rgb(d, 4).bytes;
            dw.append_frame(f, depth_frames[f]);
        }
    }
    LidarScan scan;
    scan.points = {{1.5F, -2.25F, 0.125F, 7}, {10.0F, 0.0F, -1.0F, 9}};
    std::vector<std::uint8_t> snapshot;
    {
        RecordLog lidar_log(ep / "lidar0.log");
        lidar_log.append_record(2, encode_lidar(scan));
        RecordLog imu_log(ep / "imu0.log");
        imu_log.append_record(1, encode_imu({{0, 0, -9.81}, {0, 0, 1.5}, 45.0}));
        RecordLog ego_log(ep / "ego.log");
        ActorSnapshotMsg s;
        s.frame_id = 1;
        s.sim_time_s = 0.5;
        ActorRecord a;
        a.actor_id = 1;
        a.pose.location = {1.25, 2.5, 0.75};
        a.extent = {2.4, 1.0, 0.75};
        s.actors = {a};
        ego_log.append_record(1, encode_snapshot_body(s));
    }
    m.sensors = {rgb_m, depth_m, {"lidar0", SensorKind::Lidar, 0, 0, 0, 0, 0, {}, "lidar0.log", {2}},
                 {"imu0", SensorKind::Imu, 0, 0, 0, 0, 0, {}, "imu0.log", {1}}};
    m.logs = {{"ego_motion", "ego.log"}};
    write_file_atomic(ep / "manifest.json", manifest_to_json(m));

    const auto summary = convert_outputs(ep / "manifest.json", 2);
    // 3 rgb + 3 depth + 3 depth_mm + 1 xyz + 1 imu csv + 1 ego csv.
    EXPECT_EQ(summary.files_written, 12u);
    EXPECT_EQ(summary.clamped_depth_pixels, 3u);
    const fs::path out = ep / "converted";
    for (std::int64_t f = 1; f <= 3; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "%08lld.png", static_cast<long long>(f));
        const auto png = read_png(out / "rgb0" / name);
        EXPECT_EQ(png.width, 5);
        EXPECT_EQ(png.channels, 4);
        EXPECT_EQ(png.bytes, rgb_frames[f]);
        EXPECT_EQ(read_png(out / "depth0" / name).bytes, depth_frames[f]);
        const auto mm = read_png(out / "depth0_mm" / name);
        EXPECT_EQ(mm.bit_depth, 16);
        EXPECT_EQ(mm.channels, 1);
        for (int i = 0; i < 15; ++i) {
            const std::uint8_t* p = &depth_frames[f][static_cast<std::size_t>(i) * 4];
            const double meters = 1000.0 * (p[0] + 256.0 * p[1] + 65536.0 * p[2]) / 16777215.0;
            const long expected = std::min(65535L, std::lround(meters * 1000.0));
            const long got = (mm.bytes[static_cast<std::size_t>(i) * 2] << 8) | mm.bytes[static_cast<std::size_t>(i) * 2 + 1];
            EXPECT_EQ(got, expected) << i;
        }
    }
    EXPECT_EQ(fixtures::read_file_text(out / "lidar0" / "00000002.xyz"),
              "1.500000 -2.250000 0.125000 7\n10.000000 0.000000 -1.000000 9\n");
    const std::string imu = fixtures::read_file_text(out / "imu0.csv");
    EXPECT_NE(imu.find("1,0.000000000,0.000000000,-9.810000000,0.000000000,0.000000000,1.500000000,45.000000000"),
              std::string::npos)
        << imu;
    const std::string ego = fixtures::read_file_text(out / "ego_motion.csv");
    EXPECT_EQ(ego.substr(0, ego.find('\n')),
              "frame_id,sim_time_s,actor_id,class,x,y,z,roll,pitch,yaw,vx,vy,vz,yaw_rate,extent_x,extent_y,extent_z");
    EXPECT_NE(ego.find("1,0.500000000,1,"), std::string::npos) << ego;

    // Idempotent: a second pass writes byte-identical files.
    std::map<fs::path, std::vector<std::uint8_t>> first;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (e.is_regular_file()) first[e.path()] = fixtures::read_file_bytes(e.path());
    }
    convert_outputs(ep / "manifest.json", 1);
    std::size_t count = 0;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (!e.is_regular_file()) continue;
        ++count;
        EXPECT_EQ(fixtures::read_file_bytes(e.path()), first[e.path()]) << e.path();
    }
    EXPECT_EQ(count, first.size());
}

TEST(StoreConvert, TruncatedBatchIsRejected) {
    ScratchDir dir("convbad");
    const auto rgb = fixtures::camera("rgb0", SensorKind::Rgb, 5, 3);
    Manifest m;
    SensorManifest s{"rgb0", SensorKind::Rgb, 5, 3, 4, image_frame_size(rgb), 2, {}, "", {}};
    {
        BatchWriter w(dir.path(), rgb, 2, [&](const BatchInfo& b) { s.batches.push_back(b); });
        w.append_frame(1, frame_pattern(image_frame_size(rgb), 1));
    }
    fs::resize_file(dir.path() / s.batches[0].file, 10);
    m.sensors = {s};
    write_file_atomic(dir / "manifest.json", manifest_to_json(m));
    EXPECT_THROW(convert_outputs(dir / "manifest.json", 1), StoreError);
}
