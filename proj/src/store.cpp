#include "simsync/store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "simsync/annotate.hpp"
#include "simsync/bytes.hpp"
#include "simsync/payloads.hpp"
#include "simsync/png_io.hpp"
#include "simsync/protocol.hpp"
#include "simsync/thread_pool.hpp"

namespace simsync {

using json = nlohmann::json;

namespace {

std::string errno_text(const std::string& what) {
    return what + ": " + std::strerror(errno);
}

std::string batch_file_name(std::int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "batch_%06lld.bin", static_cast<long long>(index));
    return buf;
}

std::string frame_file_name(std::int64_t frame_id, const char* ext) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%08lld.%s", static_cast<long long>(frame_id), ext);
    return buf;
}

}  // namespace

std::int64_t batch_capacity_frames(int fps) {
    return static_cast<std::int64_t>(kBatchDurationS) * fps;
}

std::uint64_t batch_file_size(const SensorSpec& spec, int fps) {
    return static_cast<std::uint64_t>(batch_capacity_frames(fps)) * image_frame_size(spec);
}

// ---------------------------------------------------------------------------

MappedFile MappedFile::create(const fs::path& path, std::size_t size) {
    MappedFile f;
    f.fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
    if (f.fd_ < 0) {
        if (errno == EEXIST) {
            throw StoreError("batch file already exists: " + path.string());
        }
        throw StoreError(errno_text("cannot create " + path.string()));
    }
    if (::ftruncate(f.fd_, static_cast<off_t>(size)) != 0) {
        throw StoreError(errno_text("cannot size " + path.string()));
    }
    const int rc = ::posix_fallocate(f.fd_, 0, static_cast<off_t>(size));
    if (rc != 0 && rc != EOPNOTSUPP && rc != EINVAL) {
        errno = rc;
        throw StoreError(errno_text("cannot reserve " + std::to_string(size) + " bytes for " + path.string()));
    }
    f.size_ = size;
    f.writable_ = true;
    if (size > 0) {
        void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, f.fd_, 0);
        if (p == MAP_FAILED) {
            throw StoreError(errno_text("mmap failed for " + path.string()));
        }
        f.data_ = static_cast<std::uint8_t*>(p);
    }
    return f;
}

MappedFile MappedFile::open_read_only(const fs::path& path) {
    MappedFile f;
    f.fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (f.fd_ < 0) {
        throw StoreError(errno_text("cannot open " + path.string()));
    }
    struct stat st {};
    if (::fstat(f.fd_, &st) != 0) {
        throw StoreError(errno_text("cannot stat " + path.string()));
    }
    f.size_ = static_cast<std::size_t>(st.st_size);
    if (f.size_ > 0) {
        void* p = ::mmap(nullptr, f.size_, PROT_READ, MAP_SHARED, f.fd_, 0);
        if (p == MAP_FAILED) {
            throw StoreError(errno_text("mmap failed for " + path.string()));
        }
        f.data_ = static_cast<std::uint8_t*>(p);
    }
    return f;
}

MappedFile::~MappedFile() {
    close();
}

MappedFile::MappedFile(MappedFile&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), data_(std::exchange(other.data_, nullptr)),
      size_(std::exchange(other.size_, 0)), writable_(std::exchange(other.writable_, false)) {}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
        data_ = std::exchange(other.data_, nullptr);
        size_ = std::exchange(other.size_, 0);
        writable_ = std::exchange(other.writable_, false);
    }
    return *this;
}

void MappedFile::flush() {
    if (data_ && writable_ && ::msync(data_, size_, MS_SYNC) != 0) {
        throw StoreError(errno_text("msync failed"));
    }
}

void MappedFile::close() {
    if (data_) {
        ::munmap(data_, size_);
        data_ = nullptr;
    }
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
    size_ = 0;
}

// ---------------------------------------------------------------------------

BatchWriter::BatchWriter(fs::path episode_dir, SensorSpec spec, int fps, OnClose on_close)
    : episode_dir_(std::move(episode_dir)), spec_(std::move(spec)), frame_size_(image_frame_size(spec_)),
      capacity_(batch_capacity_frames(fps)), on_close_(std::move(on_close)) {
    if (!is_camera(spec_.kind)) {
        throw StoreError("batch writers are for image sensors; '" + spec_.sensor_id + "' is " +
                         std::string(to_string(spec_.kind)));
    }
    fs::create_directories(episode_dir_ / "raw" / spec_.sensor_id);
    open_batch(0);
}

BatchWriter::~BatchWriter() {
    try {
        close();
    } catch (...) {
    }
}

BatchWriter open_batch_writer(const fs::path& episode_dir, const SensorSpec& spec, int fps,
                              BatchWriter::OnClose on_close) {
    return BatchWriter(episode_dir, spec, fps, std::move(on_close));
}

void BatchWriter::open_batch(std::int64_t index) {
    const fs::path relative = fs::path("raw") / spec_.sensor_id / batch_file_name(index);
    current_path_ = episode_dir_ / relative;
    file_ = MappedFile::create(current_path_, static_cast<std::size_t>(capacity_ * frame_size_));
    current_ = BatchInfo{relative.generic_string(), index, index * capacity_ + 1, (index + 1) * capacity_, {}};
    open_ = true;
}

void BatchWriter::finish_batch() {
    if (!open_) {
        return;
    }
    file_.flush();
    file_.close();
    open_ = false;
    if (current_.frames.empty()) {
        fs::remove(current_path_);
        return;
    }
    if (on_close_) {
        on_close_(current_);
    }
}

void BatchWriter::append_frame(std::int64_t frame_id, std::span<const std::uint8_t> raw) {
    if (raw.size() != frame_size_) {
        throw StoreError("sensor '" + spec_.sensor_id + "' frame " + std::to_string(frame_id) + " has " +
                         std::to_string(raw.size()) + " bytes, expected " + std::to_string(frame_size_));
    }
    if (frame_id < 1 || frame_id <= last_frame_) {
        throw StoreError("sensor '" + spec_.sensor_id + "' frame " + std::to_string(frame_id) +
                         " is out of order");
    }
    const std::int64_t index = (frame_id - 1) / capacity_;
    if (!open_ || index != current_.batch_index) {
        finish_batch();
        open_batch(index);
    }
    const auto offset = static_cast<std::size_t>(frame_id - current_.first_frame) * frame_size_;
    std::memcpy(file_.bytes().data() + offset, raw.data(), raw.size());
    current_.frames.push_back(frame_id);
    last_frame_ = frame_id;
}

void BatchWriter::close() {
    finish_batch();
}

// ---------------------------------------------------------------------------

RecordLog::RecordLog(const fs::path& path) : path_(path) {
    fs::create_directories(path.parent_path());
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) {
        throw StoreError(errno_text("cannot create log " + path.string()));
    }
    std::setvbuf(file_, nullptr, _IOFBF, 1 << 20);
}

RecordLog::~RecordLog() {
    try {
        close();
    } catch (...) {
    }
}

void RecordLog::append_record(std::int64_t frame_id, std::span<const std::uint8_t> bytes) {
    if (!frames_.empty() && frame_id <= frames_.back()) {
        throw StoreError("frame " + std::to_string(frame_id) + " appended after " + std::to_string(frames_.back()) +
                         " to " + path_.string());
    }
    std::vector<std::uint8_t> header;
    ByteWriter w(header);
    w.u64(static_cast<std::uint64_t>(frame_id));
    w.u32(static_cast<std::uint32_t>(bytes.size()));
    if (std::fwrite(header.data(), 1, header.size(), file_) != header.size() ||
        std::fwrite(bytes.data(), 1, bytes.size(), file_) != bytes.size()) {
        throw StoreError(errno_text("write failed on " + path_.string()));
    }
    frames_.push_back(frame_id);
}

void RecordLog::close() {
    if (file_) {
        const bool ok = std::fflush(file_) == 0;
        std::fclose(file_);
        file_ = nullptr;
        if (!ok) {
            throw StoreError(errno_text("flush failed on " + path_.string()));
        }
    }
}

LogScan scan_record_log(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StoreError("cannot open log " + path.string());
    }
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    LogScan scan;
    std::size_t pos = 0;
    while (pos < data.size()) {
        if (data.size() - pos < 12) {
            scan.truncated_tail = true;
            break;
        }
        ByteReader header(std::span<const std::uint8_t>(data).subspan(pos, 12));
        const auto frame_id = static_cast<std::int64_t>(header.u64());
        const std::uint32_t length = header.u32();
        if (data.size() - pos - 12 < length) {
            scan.truncated_tail = true;
            break;
        }
        const auto* begin = data.data() + pos + 12;
        scan.records.push_back({frame_id, std::vector<std::uint8_t>(begin, begin + length)});
        pos += 12 + length;
    }
    scan.valid_bytes = pos;
    return scan;
}

// ---------------------------------------------------------------------------

std::int64_t SensorManifest::stored_frames() const {
    if (!batches.empty()) {
        std::int64_t n = 0;
        for (const auto& b : batches) {
            n += static_cast<std::int64_t>(b.frames.size());
        }
        return n;
    }
    return static_cast<std::int64_t>(log_frames.size());
}

std::string manifest_to_json(const Manifest& m) {
    json sensors = json::array();
    for (const auto& s : m.sensors) {
        json entry{{"sensor_id", s.sensor_id},
                   {"kind", std::string(to_string(s.kind))},
                   {"width", s.width},
                   {"height", s.height},
                   {"channels", s.channels},
                   {"frame_size_bytes", s.frame_size_bytes},
                   {"capacity_frames", s.capacity_frames}};
        if (is_camera(s.kind)) {
            json batches = json::array();
            for (const auto& b : s.batches) {
                batches.push_back(json{{"file", b.file},
                                       {"batch_index", b.batch_index},
                                       {"first_frame", b.first_frame},
                                       {"last_frame", b.last_frame},
                                       {"frames", b.frames}});
            }
            entry["batches"] = batches;
        } else {
            entry["log"] = s.log;
            entry["frames"] = s.log_frames;
        }
        sensors.push_back(entry);
    }
    json skips = json::array();
    for (const auto& s : m.skips) {
        skips.push_back(json{{"frame_id", s.frame_id}, {"reason", s.reason}, {"detail", s.detail}});
    }
    json doc{{"format_version", m.format_version},
             {"config", json::parse(m.config_json.empty() ? "{}" : m.config_json)},
             {"episode", m.episode},
             {"world_seed", m.world_seed},
             {"frames_requested", m.frames_requested},
             {"frames_assembled", m.frames_assembled},
             {"sensors", sensors},
             {"logs", m.logs},
             {"skips", skips},
             {"labels", m.labels}};
    return doc.dump(1) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
    Manifest m;
    try {
        const json doc = json::parse(text);
        m.format_version = doc.at("format_version").get<int>();
        if (m.format_version != kManifestFormatVersion) {
            throw StoreError("unsupported manifest format version " + std::to_string(m.format_version));
        }
        m.config_json = doc.at("config").dump(2);
        m.episode = doc.at("episode").get<std::uint32_t>();
        m.world_seed = doc.at("world_seed").get<std::uint64_t>();
        m.frames_requested = doc.at("frames_requested").get<std::int64_t>();
        m.frames_assembled = doc.at("frames_assembled").get<std::int64_t>();
        for (const auto& e : doc.at("sensors")) {
            SensorManifest s;
            s.sensor_id = e.at("sensor_id").get<std::string>();
            s.kind = sensor_kind_from_string(e.at("kind").get<std::string>());
            s.width = e.at("width").get<int>();
            s.height = e.at("height").get<int>();
            s.channels = e.at("channels").get<int>();
            s.frame_size_bytes = e.at("frame_size_bytes").get<std::uint64_t>();
            s.capacity_frames = e.at("capacity_frames").get<std::int64_t>();
            if (e.contains("batches")) {
                for (const auto& b : e.at("batches")) {
                    s.batches.push_back({b.at("file").get<std::string>(), b.at("batch_index").get<std::int64_t>(),
                                         b.at("first_frame").get<std::int64_t>(),
                                         b.at("last_frame").get<std::int64_t>(),
                                         b.at("frames").get<std::vector<std::int64_t>>()});
                }
            } else {
                s.log = e.at("log").get<std::string>();
                s.log_frames = e.at("frames").get<std::vector<std::int64_t>>();
            }
            m.sensors.push_back(std::move(s));
        }
        m.logs = doc.at("logs").get<std::map<std::string, std::string>>();
        for (const auto& s : doc.at("skips")) {
            m.skips.push_back(
                {s.at("frame_id").get<std::int64_t>(), s.at("reason").get<std::string>(), s.at("detail").get<std::string>()});
        }
        m.labels = doc.at("labels").get<std::map<std::string, std::vector<std::int64_t>>>();
    } catch (const json::exception& e) {
        throw StoreError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw StoreError("cannot open manifest " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return manifest_from_json(buf.str());
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << contents;
        out.flush();
        if (!out) {
            throw StoreError("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

ManifestBuilder::ManifestBuilder(fs::path path, Manifest initial) : path_(std::move(path)), manifest_(std::move(initial)) {}

void ManifestBuilder::register_batch(const std::string& sensor_id, const BatchInfo& batch) {
    std::lock_guard lock(mutex_);
    for (auto& s : manifest_.sensors) {
        if (s.sensor_id == sensor_id) {
            s.batches.push_back(batch);
            std::sort(s.batches.begin(), s.batches.end(),
                      [](const BatchInfo& a, const BatchInfo& b) { return a.batch_index < b.batch_index; });
            write_locked();
            return;
        }
    }
    throw StoreError("manifest has no sensor '" + sensor_id + "'");
}

void ManifestBuilder::set_log(const std::string& sensor_id, const std::string& log, std::vector<std::int64_t> frames) {
    std::lock_guard lock(mutex_);
    for (auto& s : manifest_.sensors) {
        if (s.sensor_id == sensor_id) {
            s.log = log;
            s.log_frames = std::move(frames);
            return;
        }
    }
    throw StoreError("manifest has no sensor '" + sensor_id + "'");
}

void ManifestBuilder::set_aux_log(const std::string& name, const std::string& file) {
    std::lock_guard lock(mutex_);
    manifest_.logs[name] = file;
}

void ManifestBuilder::add_skip(SkipRecord skip) {
    std::lock_guard lock(mutex_);
    manifest_.skips.push_back(std::move(skip));
    std::sort(manifest_.skips.begin(), manifest_.skips.end(),
              [](const SkipRecord& a, const SkipRecord& b) { return a.frame_id < b.frame_id; });
}

void ManifestBuilder::add_label(const std::string& camera_id, std::int64_t frame_id) {
    std::lock_guard lock(mutex_);
    auto& frames = manifest_.labels[camera_id];
    frames.insert(std::upper_bound(frames.begin(), frames.end(), frame_id), frame_id);
}

void ManifestBuilder::set_counts(std::int64_t requested, std::int64_t assembled) {
    std::lock_guard lock(mutex_);
    manifest_.frames_requested = requested;
    manifest_.frames_assembled = assembled;
}

void ManifestBuilder::write() {
    std::lock_guard lock(mutex_);
    write_locked();
}

void ManifestBuilder::write_locked() {
    write_file_atomic(path_, manifest_to_json(manifest_));
}

Manifest ManifestBuilder::snapshot() const {
    std::lock_guard lock(mutex_);
    return manifest_;
}

// ---------------------------------------------------------------------------

std::uint16_t depth_to_millimeters(double meters, bool* clamped) {
    const double mm = std::round(meters * 1000.0);
    if (mm > 65535.0) {
        if (clamped) {
            *clamped = true;
        }
        return 65535;
    }
    if (clamped) {
        *clamped = false;
    }
    return static_cast<std::uint16_t>(std::max(0.0, mm));
}

namespace {

struct ConvertTask {
    std::function<ConvertSummary()> run;
};

std::string format_csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return buf;
}

}  // namespace

ConvertSummary convert_outputs(const fs::path& manifest_path, std::size_t workers) {
    const Manifest manifest = load_manifest(manifest_path);
    const fs::path episode_dir = manifest_path.parent_path();
    const fs::path out_dir = episode_dir / "converted";

    std::vector<std::function<ConvertSummary()>> tasks;
    for (const auto& sensor : manifest.sensors) {
        if (is_camera(sensor.kind)) {
            fs::create_directories(out_dir / sensor.sensor_id);
            if (sensor.kind == SensorKind::Depth) {
                fs::create_directories(out_dir / (sensor.sensor_id + "_mm"));
            }
            for (const auto& batch : sensor.batches) {
                tasks.push_back([&sensor, &batch, episode_dir, out_dir] {
                    ConvertSummary summary;
                    const auto file = MappedFile::open_read_only(episode_dir / batch.file);
                    const std::uint64_t expected = sensor.frame_size_bytes * sensor.capacity_frames;
                    if (file.size() != expected) {
                        throw StoreError("batch " + batch.file + " has " + std::to_string(file.size()) +
                                         " bytes, manifest implies " + std::to_string(expected));
                    }
                    for (const auto frame : batch.frames) {
                        const auto slice = file.bytes().subspan(
                            static_cast<std::size_t>(frame - batch.first_frame) * sensor.frame_size_bytes,
                            sensor.frame_size_bytes);
                        write_png(out_dir / sensor.sensor_id / frame_file_name(frame, "png"), sensor.width,
                                  sensor.height, 4, 8, slice);
                        ++summary.files_written;
                        if (sensor.kind == SensorKind::Depth) {
                            const DepthImage d = decode_depth(slice, sensor.width, sensor.height, 4);
                            std::vector<std::uint16_t> mm(d.meters.size());
                            for (std::size_t i = 0; i < mm.size(); ++i) {
                                bool clamped = false;
                                mm[i] = depth_to_millimeters(d.meters[i], &clamped);
                                summary.clamped_depth_pixels += clamped ? 1 : 0;
                            }
                            write_png_gray16(out_dir / (sensor.sensor_id + "_mm") / frame_file_name(frame, "png"),
                                             sensor.width, sensor.height, mm);
                            ++summary.files_written;
                        }
                    }
                    return summary;
                });
            }
        } else {
            tasks.push_back([&sensor, episode_dir, out_dir] {
                ConvertSummary summary;
                const LogScan scan = scan_record_log(episode_dir / sensor.log);
                if (scan.truncated_tail) {
                    throw StoreError("log " + sensor.log + " has a truncated tail");
                }
                if (sensor.kind == SensorKind::Lidar) {
                    fs::create_directories(out_dir / sensor.sensor_id);
                    for (const auto& rec : scan.records) {
                        std::ofstream out(out_dir / sensor.sensor_id / frame_file_name(rec.frame_id, "xyz"));
                        char line[128];
                        for (const auto& p : decode_lidar(rec.bytes).points) {
                            std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %u\n", p.x, p.y, p.z, p.actor_id);
                            out << line;
                        }
                        ++summary.files_written;
                    }
                } else {
                    std::ofstream out(out_dir / (sensor.sensor_id + ".csv"));
                    if (sensor.kind == SensorKind::Imu) {
                        out << "frame_id,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z,compass_deg\n";
                        for (const auto& rec : scan.records) {
                            const auto imu = decode_imu(rec.bytes);
                            out << rec.frame_id;
                            for (double v : {imu.accelerometer.x, imu.accelerometer.y, imu.accelerometer.z,
                                             imu.gyroscope.x, imu.gyroscope.y, imu.gyroscope.z, imu.compass_deg}) {
                                out << ',' << format_csv_double(v);
                            }
                            out << '\n';
                        }
                    } else {
                        out << "frame_id,latitude,longitude,altitude\n";
                        for (const auto& rec : scan.records) {
                            const auto g = decode_gnss(rec.bytes);
                            out << rec.frame_id << ',' << format_csv_double(g.latitude) << ','
                                << format_csv_double(g.longitude) << ',' << format_csv_double(g.altitude) << '\n';
                        }
                    }
                    ++summary.files_written;
                }
                return summary;
            });
        }
    }
    for (const auto& [name, file] : manifest.logs) {
        tasks.push_back([name = name, file = file, episode_dir, out_dir] {
            ConvertSummary summary;
            const LogScan scan = scan_record_log(episode_dir / file);
            std::ofstream out(out_dir / (name + ".csv"));
            out << "frame_id,sim_time_s,actor_id,class,x,y,z,roll,pitch,yaw,vx,vy,vz,yaw_rate,extent_x,extent_y,"
                   "extent_z\n";
            for (const auto& rec : scan.records) {
                const auto snap = decode_snapshot_body(rec.bytes);
                for (const auto& a : snap.actors) {
                    out << rec.frame_id << ',' << format_csv_double(snap.sim_time_s) << ',' << a.actor_id << ','
                        << to_string(static_cast<ActorClass>(a.cls));
                    for (double v : {a.pose.location.x, a.pose.location.y, a.pose.location.z, a.pose.rotation.roll,
                                     a.pose.rotation.pitch, a.pose.rotation.yaw, a.velocity.x, a.velocity.y,
                                     a.velocity.z, a.yaw_rate, a.extent.x, a.extent.y, a.extent.z}) {
                        out << ',' << format_csv_double(v);
                    }
                    out << '\n';
                }
            }
            ++summary.files_written;
            return summary;
        });
    }
    fs::create_directories(out_dir);

    ThreadPool pool(workers == 0 ? default_parallelism() : workers);
    std::vector<std::future<ConvertSummary>> futures;
    futures.reserve(tasks.size());
    for (auto& task : tasks) {
        futures.push_back(pool.submit(task));
    }
    ConvertSummary total;
    std::exception_ptr first_error;
    for (auto& f : futures) {
        try {
            const auto s = f.get();
            total.files_written += s.files_written;
            total.clamped_depth_pixels += s.clamped_depth_pixels;
        } catch (...) {
            if (!first_error) {
                first_error = std::current_exception();
            }
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
    return total;
}

}  // namespace simsync
