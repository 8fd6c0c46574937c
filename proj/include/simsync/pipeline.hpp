#pragma once

// Collection client. Both collectors share the demultiplexing, matching,
// annotation and storage code below and produce byte-identical episodes;
// they differ only in how that work is scheduled.

#include <array>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "simsync/config.hpp"
#include "simsync/protocol.hpp"
#include "simsync/store.hpp"
#include "simsync/transport.hpp"

namespace simsync {

namespace fs = std::filesystem;

using Bytes = std::shared_ptr<const std::vector<std::uint8_t>>;

struct QueuedPayload {
    std::int64_t frame_id = 0;
    Bytes bytes;
};

struct QueuedSnapshot {
    std::int64_t frame_id = 0;
    std::shared_ptr<const ActorSnapshotMsg> snapshot;
};

// Per-sensor FIFOs (indexed like RunConfig::sensors) plus the snapshot FIFO.
struct FrameQueues {
    explicit FrameQueues(std::size_t sensors = 0) : sensors(sensors) {}
    std::vector<std::deque<QueuedPayload>> sensors;
    std::deque<QueuedSnapshot> snapshots;

    std::size_t max_depth() const;
};

struct FrameBundle {
    std::int64_t frame_id = 0;
    std::shared_ptr<const ActorSnapshotMsg> snapshot;
    std::vector<Bytes> payloads;  // indexed like RunConfig::sensors
    std::chrono::steady_clock::time_point assembled_at;
};

struct Mismatch {
    std::int64_t frame_id = 0;
    // Offending queue (sensor id or "snapshot") and the head it carried; nullopt = empty queue.
    std::vector<std::pair<std::string, std::optional<std::int64_t>>> offending;
    std::size_t stale_discarded = 0;

    // "cam0:absent,lidar0:9"
    std::string detail() const;
};

inline constexpr const char* kSkipMissingSensor = "missing sensor";
inline constexpr const char* kSkipAborted = "episode aborted";

// If every head carries `target`, pops them all and returns the bundle.
// Otherwise pops the heads equal to `target`, discards heads older than it,
// leaves newer heads in place and reports each offending queue.
std::variant<FrameBundle, Mismatch> match_frame(FrameQueues& queues, const std::vector<std::string>& sensor_ids,
                                                std::int64_t target);

// Largest lag over all sensors; the matcher targets N - this at TICK_RESP(N).
int matcher_lag(const RunConfig& cfg);

// Whether frame f is written to disk (capture_every_step=false keeps one frame per second).
bool frame_is_stored(const RunConfig& cfg, std::int64_t frame_id);

struct StageStats {
    static constexpr std::array<double, 11> kBucketUpperMs{0.1, 0.25, 0.5, 1, 2.5, 5, 10, 25, 50, 100, 250};

    std::uint64_t count = 0;
    double total_s = 0.0;
    double max_s = 0.0;
    std::array<std::uint64_t, kBucketUpperMs.size() + 1> buckets{};  // last bucket is open-ended

    void add(double seconds);
};

// Thread-safe per-stage timing histogram.
class StageTimers {
public:
    void add(const std::string& stage, double seconds);
    std::map<std::string, StageStats> snapshot() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, StageStats> stages_;
};

enum class CollectMode { Pipelined, Baseline };
std::string_view to_string(CollectMode mode);
CollectMode collect_mode_from_string(std::string_view name);

struct EpisodeReport {
    std::uint32_t episode = 0;
    CollectMode mode = CollectMode::Pipelined;
    std::size_t workers = 0;
    std::int64_t frames_requested = 0;
    std::int64_t frames_assembled = 0;
    std::int64_t frames_skipped = 0;
    std::vector<SkipRecord> skips;
    std::uint64_t stale_discarded = 0;
    std::size_t max_queue_depth = 0;
    double wall_time_s = 0.0;
    bool aborted = false;
    std::string error;
    std::map<std::string, StageStats> stages;
    fs::path episode_dir;
};

struct CollectOptions {
    CollectMode mode = CollectMode::Pipelined;
    std::size_t workers = 0;  // annotation workers; 0 = host parallelism
    fs::path output_dir;      // overrides cfg.output_dir when non-empty
};

fs::path episode_dir(const fs::path& output_dir, std::uint32_t episode);

// Both exchange HELLO first (a rejected HELLO throws ProtocolError), then tick
// the whole episode. A lost connection or a protocol violation afterwards
// yields a partial report with aborted set.
EpisodeReport run_episode_pipelined(const ValidatedConfig& cfg, Connection& conn, std::uint32_t episode,
                                    const CollectOptions& options);
EpisodeReport run_episode_baseline(const ValidatedConfig& cfg, Connection& conn, std::uint32_t episode,
                                   const CollectOptions& options);
EpisodeReport run_episode(const ValidatedConfig& cfg, Connection& conn, std::uint32_t episode,
                          const CollectOptions& options);

struct RunReport {
    CollectMode mode = CollectMode::Pipelined;
    std::size_t workers = 0;
    std::vector<EpisodeReport> episodes;
    double wall_time_s = 0.0;

    bool ok() const;
};

// Runs episodes 1..cfg.episodes on one connection, writes
// <output_dir>/report.json and returns the reports.
RunReport collect(const ValidatedConfig& cfg, Connection& conn, const CollectOptions& options);

std::string episode_report_json(const EpisodeReport& r);
std::string run_report_json(const RunReport& r);

}  // namespace simsync
