#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simsync/config.hpp"

namespace simsync {

namespace fs = std::filesystem;

// Batch length in simulated seconds. A batch file holds
// kBatchDurationS * fps * width * height * channels bytes.
inline constexpr int kBatchDurationS = 1;
inline constexpr int kManifestFormatVersion = 1;

class StoreError : public std::runtime_error {
public:
    explicit StoreError(const std::string& what) : std::runtime_error(what) {}
};

std::int64_t batch_capacity_frames(int fps);
std::uint64_t batch_file_size(const SensorSpec& spec, int fps);

// Read-write shared mapping of a file created at an exact size.
class MappedFile {
public:
    MappedFile() = default;
    // Creates `path` (must not exist) with `size` bytes reserved on disk.
    static MappedFile create(const fs::path& path, std::size_t size);
    static MappedFile open_read_only(const fs::path& path);
    ~MappedFile();
    MappedFile(MappedFile&& other) noexcept;
    MappedFile& operator=(MappedFile&& other) noexcept;
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;

    std::span<std::uint8_t> bytes() { return {data_, size_}; }
    std::span<const std::uint8_t> bytes() const { return {data_, size_}; }
    std::size_t size() const { return size_; }
    void flush();
    void close();

private:
    int fd_ = -1;
    std::uint8_t* data_ = nullptr;
    std::size_t size_ = 0;
    bool writable_ = false;
};

struct BatchInfo {
    std::string file;  // relative to the episode directory
    std::int64_t batch_index = 0;
    std::int64_t first_frame = 0;  // first frame id the batch can hold
    std::int64_t last_frame = 0;   // last frame id the batch can hold
    std::vector<std::int64_t> frames;  // frames actually written, ascending

    bool operator==(const BatchInfo&) const = default;
};

// Writes fixed-size image frames of one sensor into pre-sized memory-mapped
// batch files. Frame f lives in batch (f - 1) / capacity at byte offset
// (f - first_frame) * frame_size. Owned by exactly one thread.
class BatchWriter {
public:
    using OnClose = std::function<void(const BatchInfo&)>;

    BatchWriter(fs::path episode_dir, SensorSpec spec, int fps, OnClose on_close = {});
    ~BatchWriter();
    BatchWriter(const BatchWriter&) = delete;
    BatchWriter& operator=(const BatchWriter&) = delete;

    // Rotates to the frame's batch first when needed. Frames must arrive in
    // increasing order. Throws StoreError on a payload size mismatch.
    void append_frame(std::int64_t frame_id, std::span<const std::uint8_t> raw);

    // Flushes and registers the open batch.
    void close();

    std::uint64_t frame_size() const { return frame_size_; }
    std::int64_t capacity_frames() const { return capacity_; }
    const fs::path& current_path() const { return current_path_; }

private:
    void open_batch(std::int64_t index);
    void finish_batch();

    fs::path episode_dir_;
    SensorSpec spec_;
    std::uint64_t frame_size_;
    std::int64_t capacity_;
    OnClose on_close_;
    MappedFile file_;
    fs::path current_path_;
    BatchInfo current_;
    bool open_ = false;
    std::int64_t last_frame_ = 0;
};

BatchWriter open_batch_writer(const fs::path& episode_dir, const SensorSpec& spec, int fps,
                              BatchWriter::OnClose on_close = {});

// Append-only log of [u64 frame_id][u32 length][bytes] records, little-endian.
class RecordLog {
public:
    explicit RecordLog(const fs::path& path);
    ~RecordLog();
    RecordLog(const RecordLog&) = delete;
    RecordLog& operator=(const RecordLog&) = delete;

    void append_record(std::int64_t frame_id, std::span<const std::uint8_t> bytes);
    void close();
    std::vector<std::int64_t> frames() const { return frames_; }

private:
    std::FILE* file_ = nullptr;
    fs::path path_;
    std::vector<std::int64_t> frames_;
};

struct LogRecord {
    std::int64_t frame_id = 0;
    std::vector<std::uint8_t> bytes;
};

struct LogScan {
    std::vector<LogRecord> records;
    bool truncated_tail = false;
    std::uint64_t valid_bytes = 0;
};

// Sequential scan. A partial trailing record is reported, never thrown, and
// every record before it is returned intact.
LogScan scan_record_log(const fs::path& path);

struct SkipRecord {
    std::int64_t frame_id = 0;
    std::string reason;
    std::string detail;
    bool operator==(const SkipRecord&) const = default;
};

struct SensorManifest {
    std::string sensor_id;
    SensorKind kind = SensorKind::Rgb;
    int width = 0;
    int height = 0;
    int channels = 0;
    std::uint64_t frame_size_bytes = 0;
    std::int64_t capacity_frames = 0;
    std::vector<BatchInfo> batches;  // image sensors
    std::string log;                 // record-log sensors
    std::vector<std::int64_t> log_frames;

    std::int64_t stored_frames() const;
    bool operator==(const SensorManifest&) const = default;
};

struct Manifest {
    int format_version = kManifestFormatVersion;
    std::string config_json;  // canonical resolved config
    std::uint32_t episode = 0;
    std::uint64_t world_seed = 0;
    std::int64_t frames_requested = 0;
    std::int64_t frames_assembled = 0;
    std::vector<SensorManifest> sensors;
    std::map<std::string, std::string> logs;  // snapshots, ego_motion, gt_vehicles, gt_pedestrians
    std::vector<SkipRecord> skips;
    std::map<std::string, std::vector<std::int64_t>> labels;  // camera id -> labeled frames

    bool operator==(const Manifest&) const = default;
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
Manifest load_manifest(const fs::path& path);
// Writes via a temporary file and rename.
void write_file_atomic(const fs::path& path, const std::string& contents);

// Single owner of an episode's manifest. Thread-safe; each update rewrites
// the file so it only ever references flushed batches.
class ManifestBuilder {
public:
    ManifestBuilder(fs::path path, Manifest initial);

    void register_batch(const std::string& sensor_id, const BatchInfo& batch);
    void set_log(const std::string& sensor_id, const std::string& log, std::vector<std::int64_t> frames);
    void set_aux_log(const std::string& name, const std::string& file);
    void add_skip(SkipRecord skip);
    void add_label(const std::string& camera_id, std::int64_t frame_id);
    void set_counts(std::int64_t requested, std::int64_t assembled);
    void write();
    Manifest snapshot() const;

private:
    void write_locked();

    mutable std::mutex mutex_;
    fs::path path_;
    Manifest manifest_;
};

struct ConvertSummary {
    std::size_t files_written = 0;
    std::size_t clamped_depth_pixels = 0;
};

// Post-run pass: image batches -> RGBA PNG, depth -> RGBA PNG plus 16-bit
// millimetre PNG (<sensor>_mm/), lidar -> <sensor>/<frame>.xyz, imu/gnss and
// ego motion -> one CSV each. Output goes to <episode>/converted/.
ConvertSummary convert_outputs(const fs::path& manifest_path, std::size_t workers = 0);

// Millimetre value of a decoded depth, clamped to 16 bits; sets *clamped when it was.
std::uint16_t depth_to_millimeters(double meters, bool* clamped);

}  // namespace simsync
