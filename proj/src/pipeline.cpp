#include "simsync/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "simsync/annotate.hpp"
#include "simsync/payloads.hpp"
#include "simsync/server.hpp"
#include "simsync/thread_pool.hpp"

namespace simsync {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Matching

std::size_t FrameQueues::max_depth() const {
    std::size_t depth = snapshots.size();
    for (const auto& q : sensors) {
        depth = std::max(depth, q.size());
    }
    return depth;
}

std::string Mismatch::detail() const {
    std::string out;
    for (const auto& [name, head] : offending) {
        if (!out.empty()) {
            out += ',';
        }
        out += name + ':' + (head ? std::to_string(*head) : std::string("absent"));
    }
    return out;
}

std::variant<FrameBundle, Mismatch> match_frame(FrameQueues& queues, const std::vector<std::string>& sensor_ids,
                                                std::int64_t target) {
    bool complete = !queues.snapshots.empty() && queues.snapshots.front().frame_id == target;
    for (const auto& q : queues.sensors) {
        complete = complete && !q.empty() && q.front().frame_id == target;
    }
    if (complete) {
        FrameBundle bundle;
        bundle.frame_id = target;
        bundle.snapshot = std::move(queues.snapshots.front().snapshot);
        queues.snapshots.pop_front();
        bundle.payloads.reserve(queues.sensors.size());
        for (auto& q : queues.sensors) {
            bundle.payloads.push_back(std::move(q.front().bytes));
            q.pop_front();
        }
        bundle.assembled_at = Clock::now();
        return bundle;
    }

    Mismatch m;
    m.frame_id = target;
    auto settle = [&](auto& q, const std::string& name) {
        if (q.empty()) {
            m.offending.emplace_back(name, std::nullopt);
            return;
        }
        const std::int64_t head = q.front().frame_id;
        if (head != target) {
            m.offending.emplace_back(name, head);
        }
        while (!q.empty() && q.front().frame_id < target) {
            q.pop_front();
            ++m.stale_discarded;
        }
        if (!q.empty() && q.front().frame_id == target) {
            q.pop_front();
        }
    };
    for (std::size_t i = 0; i < queues.sensors.size(); ++i) {
        settle(queues.sensors[i], sensor_ids.at(i));
    }
    settle(queues.snapshots, "snapshot");
    return m;
}

int matcher_lag(const RunConfig& cfg) {
    int lag = 0;
    for (const auto& s : cfg.sensors) {
        lag = std::max(lag, s.lag_frames);
    }
    return lag;
}

bool frame_is_stored(const RunConfig& cfg, std::int64_t frame_id) {
    return cfg.capture_every_step || (frame_id - 1) % cfg.fps == 0;
}

// ---------------------------------------------------------------------------
// Timing

void StageStats::add(double seconds) {
    ++count;
    total_s += seconds;
    max_s = std::max(max_s, seconds);
    const double ms = seconds * 1000.0;
    std::size_t b = 0;
    while (b < kBucketUpperMs.size() && ms > kBucketUpperMs[b]) {
        ++b;
    }
    ++buckets[b];
}

void StageTimers::add(const std::string& stage, double seconds) {
    std::lock_guard lock(mutex_);
    stages_[stage].add(seconds);
}

std::map<std::string, StageStats> StageTimers::snapshot() const {
    std::lock_guard lock(mutex_);
    return stages_;
}

std::string_view to_string(CollectMode mode) {
    return mode == CollectMode::Pipelined ? "pipelined" : "baseline";
}

CollectMode collect_mode_from_string(std::string_view name) {
    if (name == "pipelined") {
        return CollectMode::Pipelined;
    }
    if (name == "baseline") {
        return CollectMode::Baseline;
    }
    throw std::invalid_argument("unknown collect mode '" + std::string(name) + "'");
}

fs::path episode_dir(const fs::path& output_dir, std::uint32_t episode) {
    char name[32];
    std::snprintf(name, sizeof(name), "episode_%04u", episode);
    return output_dir / name;
}

// ---------------------------------------------------------------------------
// Episode output: writers, annotation and the manifest, shared by both modes.

namespace {

std::string canonical_config_json(const RunConfig& cfg) {
    RunConfig copy = cfg;
    copy.output_dir.clear();
    return serialize_config(copy);
}

Manifest initial_manifest(const RunConfig& cfg, std::uint32_t episode) {
    Manifest m;
    m.config_json = canonical_config_json(cfg);
    m.episode = episode;
    m.world_seed = episode_world_seed(cfg.seed, episode);
    for (const auto& spec : cfg.sensors) {
        SensorManifest s;
        s.sensor_id = spec.sensor_id;
        s.kind = spec.kind;
        if (is_camera(spec.kind)) {
            s.width = spec.width;
            s.height = spec.height;
            s.channels = kImageChannels;
            s.frame_size_bytes = image_frame_size(spec);
            s.capacity_frames = batch_capacity_frames(cfg.fps);
        } else if (spec.kind == SensorKind::Lidar) {
            s.channels = spec.channels;
        }
        m.sensors.push_back(std::move(s));
    }
    return m;
}

ActorSnapshotMsg filter_snapshot(const ActorSnapshotMsg& snap, ActorClass cls) {
    ActorSnapshotMsg out{snap.frame_id, snap.sim_time_s, {}};
    for (const auto& a : snap.actors) {
        if (a.cls == static_cast<std::uint8_t>(cls)) {
            out.actors.push_back(a);
        }
    }
    return out;
}

class EpisodeSink {
public:
    EpisodeSink(const RunConfig& cfg, std::uint32_t episode, fs::path dir)
        : cfg_(cfg), dir_(std::move(dir)), manifest_(dir_ / "manifest.json", initial_manifest(cfg, episode)) {
        if (fs::exists(dir_ / "manifest.json")) {
            throw StoreError("episode directory already holds a run: " + dir_.string());
        }
        fs::create_directories(dir_);
        for (std::size_t i = 0; i < cfg_.sensors.size(); ++i) {
            const auto& spec = cfg_.sensors[i];
            if (is_camera(spec.kind)) {
                batches_.push_back(std::make_unique<BatchWriter>(
                    dir_, spec, cfg_.fps,
                    [this, id = spec.sensor_id](const BatchInfo& b) { manifest_.register_batch(id, b); }));
                logs_.push_back(nullptr);
            } else {
                batches_.push_back(nullptr);
                logs_.push_back(std::make_unique<RecordLog>(dir_ / log_name(spec.sensor_id)));
            }
            if (spec.kind == SensorKind::Depth) {
                depth_cameras_.push_back(i);
                fs::create_directories(dir_ / "labels" / spec.sensor_id);
            }
            if (spec.kind == SensorKind::Lidar) {
                lidars_.push_back(i);
            }
        }
        if (cfg_.save_ego_motion) {
            aux_.emplace_back("ego_motion", std::make_unique<RecordLog>(dir_ / log_name("ego_motion")));
        }
        if (cfg_.save_vehicle_gt) {
            aux_.emplace_back("gt_vehicles", std::make_unique<RecordLog>(dir_ / log_name("gt_vehicles")));
        }
        if (cfg_.save_pedestrian_gt) {
            aux_.emplace_back("gt_pedestrians", std::make_unique<RecordLog>(dir_ / log_name("gt_pedestrians")));
        }
        manifest_.write();
    }

    static std::string log_name(const std::string& name) { return "logs/" + name + ".log"; }

    const fs::path& dir() const { return dir_; }

    // Called by exactly one thread per sensor, in frame order.
    void store_payload(std::size_t sensor, std::int64_t frame_id, const std::vector<std::uint8_t>& bytes) {
        if (batches_[sensor]) {
            batches_[sensor]->append_frame(frame_id, bytes);
        } else {
            logs_[sensor]->append_record(frame_id, bytes);
        }
    }

    // Called by one thread, in frame order.
    void store_snapshot(std::int64_t frame_id, const ActorSnapshotMsg& snap) {
        for (auto& [name, log] : aux_) {
            ActorSnapshotMsg part;
            if (name == "ego_motion") {
                part = filter_snapshot(snap, ActorClass::Ego);
            } else if (name == "gt_vehicles") {
                part = filter_snapshot(snap, ActorClass::Vehicle);
            } else {
                part = filter_snapshot(snap, ActorClass::Pedestrian);
            }
            log->append_record(frame_id, encode_snapshot_body(part));
        }
    }

    // Pure per-frame work plus one label file per depth camera; safe from any thread.
    void annotate(const FrameBundle& b) {
        if (depth_cameras_.empty()) {
            return;
        }
        std::vector<ActorState> actors;
        actors.reserve(b.snapshot->actors.size());
        std::uint32_t ego_id = 0;
        for (const auto& rec : b.snapshot->actors) {
            actors.push_back(to_actor_state(rec));
            if (rec.cls == static_cast<std::uint8_t>(ActorClass::Ego)) {
                ego_id = rec.actor_id;
            }
        }
        std::optional<std::map<std::uint32_t, int>> hits;
        if (!lidars_.empty()) {
            hits.emplace();
            for (std::size_t i : lidars_) {
                for (const auto& [id, n] : count_lidar_hits(decode_lidar(*b.payloads[i]))) {
                    (*hits)[id] += n;
                }
            }
        }
        for (std::size_t i : depth_cameras_) {
            const auto& spec = cfg_.sensors[i];
            const DepthImage depth = decode_depth(*b.payloads[i], spec.width, spec.height, kImageChannels);
            AnnotationContext ctx;
            ctx.frame_id = b.frame_id;
            ctx.actors = &actors;
            ctx.ego_id = ego_id;
            ctx.camera = &spec;
            ctx.depth = &depth;
            ctx.max_distance_m = cfg_.max_distance_m;
            ctx.lidar_hits = hits ? &*hits : nullptr;
            ctx.min_lidar_points = cfg_.min_lidar_points;
            const std::string text = format_labels(annotate_frame(ctx));
            char name[32];
            std::snprintf(name, sizeof(name), "%08lld.txt", static_cast<long long>(b.frame_id));
            const fs::path path = dir_ / "labels" / spec.sensor_id / name;
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            out << text;
            if (!out) {
                throw StoreError("cannot write labels " + path.string());
            }
            manifest_.add_label(spec.sensor_id, b.frame_id);
        }
    }

    void add_skip(const SkipRecord& skip) { manifest_.add_skip(skip); }

    // Closes every writer (registering the open batches) and writes the final manifest.
    void finish(std::int64_t requested, std::int64_t assembled) {
        for (auto& b : batches_) {
            if (b) {
                b->close();
            }
        }
        for (std::size_t i = 0; i < logs_.size(); ++i) {
            if (logs_[i]) {
                logs_[i]->close();
                manifest_.set_log(cfg_.sensors[i].sensor_id, log_name(cfg_.sensors[i].sensor_id), logs_[i]->frames());
            }
        }
        for (auto& [name, log] : aux_) {
            log->close();
            manifest_.set_aux_log(name, log_name(name));
        }
        manifest_.set_counts(requested, assembled);
        manifest_.write();
    }

private:
    const RunConfig& cfg_;
    fs::path dir_;
    ManifestBuilder manifest_;
    std::vector<std::unique_ptr<BatchWriter>> batches_;
    std::vector<std::unique_ptr<RecordLog>> logs_;
    std::vector<std::pair<std::string, std::unique_ptr<RecordLog>>> aux_;
    std::vector<std::size_t> depth_cameras_;
    std::vector<std::size_t> lidars_;
};

std::vector<std::string> sensor_ids_of(const RunConfig& cfg) {
    std::vector<std::string> ids;
    for (const auto& s : cfg.sensors) {
        ids.push_back(s.sensor_id);
    }
    return ids;
}

std::size_t sensor_index(const std::vector<std::string>& ids, const std::string& id) {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) {
        throw ProtocolError("payload for unknown sensor '" + id + "'");
    }
    return static_cast<std::size_t>(it - ids.begin());
}

void handshake(const RunConfig& cfg, Connection& conn, std::uint32_t episode) {
    conn.send(HelloMsg{kProtocolVersion, config_digest(cfg), episode});
    auto reply = conn.receive();
    if (!reply) {
        throw ProtocolError("connection closed during HELLO");
    }
    if (const auto* err = std::get_if<ErrorMsg>(&*reply)) {
        throw ProtocolError("server rejected HELLO: " + err->message);
    }
    const auto* hello = std::get_if<HelloMsg>(&*reply);
    if (!hello || hello->episode != episode) {
        throw ProtocolError("unexpected reply to HELLO");
    }
}

// Demultiplexes one non-control message into the queues. Returns the TICK_RESP
// frame id, or -1 for SHUTDOWN, or 0 for data messages.
std::int64_t demux(Message&& message, FrameQueues& queues, const std::vector<std::string>& ids) {
    if (auto* p = std::get_if<SensorPayloadMsg>(&message)) {
        const std::size_t i = sensor_index(ids, p->sensor_id);
        auto& q = queues.sensors[i];
        const auto frame = static_cast<std::int64_t>(p->frame_id);
        if (!q.empty() && q.back().frame_id >= frame) {
            throw ProtocolError("sensor '" + p->sensor_id + "' frame ids not increasing");
        }
        q.push_back({frame, std::make_shared<const std::vector<std::uint8_t>>(std::move(p->payload))});
        return 0;
    }
    if (auto* s = std::get_if<ActorSnapshotMsg>(&message)) {
        const auto frame = static_cast<std::int64_t>(s->frame_id);
        queues.snapshots.push_back({frame, std::make_shared<const ActorSnapshotMsg>(std::move(*s))});
        return 0;
    }
    if (const auto* r = std::get_if<TickRespMsg>(&message)) {
        if (r->frame_id == 0) {
            throw ProtocolError("TICK_RESP carries frame 0");
        }
        return static_cast<std::int64_t>(r->frame_id);
    }
    if (std::holds_alternative<ShutdownMsg>(message)) {
        return -1;
    }
    if (const auto* e = std::get_if<ErrorMsg>(&message)) {
        throw ProtocolError("server error: " + e->message);
    }
    throw ProtocolError("unexpected message kind from server");
}

// Frames the matcher must settle after the server echoed SHUTDOWN at tick `last`.
std::vector<std::int64_t> drain_targets(std::int64_t last, int lag) {
    std::vector<std::int64_t> out;
    for (std::int64_t f = std::max<std::int64_t>(1, last - lag + 1); f <= last; ++f) {
        out.push_back(f);
    }
    return out;
}

class ErrorSlot {
public:
    void set(const std::string& what) {
        std::lock_guard lock(mutex_);
        if (first_.empty()) {
            first_ = what;
        }
    }
    std::string get() const {
        std::lock_guard lock(mutex_);
        return first_;
    }

private:
    mutable std::mutex mutex_;
    std::string first_;
};

EpisodeReport make_report(const ValidatedConfig& cfg, std::uint32_t episode, const CollectOptions& options,
                          std::size_t workers) {
    EpisodeReport r;
    r.episode = episode;
    r.mode = options.mode;
    r.workers = workers;
    r.frames_requested = derive_timing(cfg).total_frames;
    const fs::path out = options.output_dir.empty() ? fs::path(cfg->output_dir) : options.output_dir;
    r.episode_dir = episode_dir(out, episode);
    return r;
}

// Frames an aborted run never settled are logged as skips so every frame id
// is accounted for.
void skip_unsettled(EpisodeReport& r, EpisodeSink& sink, std::int64_t settled_through) {
    for (std::int64_t f = settled_through + 1; f <= r.frames_requested; ++f) {
        SkipRecord skip{f, kSkipAborted, r.error};
        sink.add_skip(skip);
        r.skips.push_back(std::move(skip));
    }
}

void finalize_counts(EpisodeReport& r) {
    std::sort(r.skips.begin(), r.skips.end(),
              [](const SkipRecord& a, const SkipRecord& b) { return a.frame_id < b.frame_id; });
    r.frames_skipped = static_cast<std::int64_t>(r.skips.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipelined collector

EpisodeReport run_episode_pipelined(const ValidatedConfig& vcfg, Connection& conn, std::uint32_t episode,
                                    const CollectOptions& options) {
    const RunConfig& cfg = vcfg.get();
    const std::size_t workers = options.workers == 0 ? default_parallelism() : options.workers;
    EpisodeReport report = make_report(vcfg, episode, options, workers);
    handshake(cfg, conn, episode);

    const std::int64_t total = report.frames_requested;
    const int lag = matcher_lag(cfg);
    const auto ids = sensor_ids_of(cfg);
    const std::size_t n_sensors = ids.size();

    EpisodeSink sink(cfg, episode, report.episode_dir);
    StageTimers timers;
    ErrorSlot errors;

    FrameQueues queues(n_sensors);
    std::mutex queues_mutex;
    // Ingestion hands each TICK_RESP to the matcher, which acknowledges it to
    // the coordinator only after settling the frame it made due. The next tick
    // therefore waits on matching, which bounds every queue at L + 1 entries.
    struct DueFrame {
        std::int64_t tick = 0;    // TICK_RESP frame id; 0 for the shutdown drain
        std::int64_t target = 0;  // frame to settle; 0 for none
    };
    BlockingQueue<std::int64_t> acks;
    BlockingQueue<DueFrame> targets;
    constexpr std::size_t kHandOff = 16;
    BlockingQueue<FrameBundle> bundles(kHandOff);
    std::vector<std::unique_ptr<BlockingQueue<QueuedPayload>>> store_queues;
    for (std::size_t i = 0; i < n_sensors; ++i) {
        store_queues.push_back(std::make_unique<BlockingQueue<QueuedPayload>>(kHandOff));
    }
    BlockingQueue<QueuedSnapshot> snapshot_queue(kHandOff);

    std::int64_t assembled = 0;
    std::uint64_t stale = 0;
    std::vector<SkipRecord> skips;
    std::size_t max_depth = 0;
    std::int64_t settled = 0;
    bool clean_shutdown = false;

    const auto t0 = Clock::now();

    // Ingestion: demultiplexes the stream into the per-sensor FIFOs.
    std::thread ingestion([&] {
        std::int64_t last = 0;
        try {
            while (auto message = conn.receive()) {
                std::int64_t tag = 0;
                {
                    std::lock_guard lock(queues_mutex);
                    tag = demux(std::move(*message), queues, ids);
                    max_depth = std::max(max_depth, queues.max_depth());
                }
                if (tag > 0) {
                    last = tag;
                    targets.push({tag, tag - lag >= 1 ? tag - lag : 0});
                } else if (tag < 0) {
                    for (std::int64_t f : drain_targets(last, lag)) {
                        targets.push({0, f});
                    }
                    clean_shutdown = true;
                    break;
                }
            }
            if (!clean_shutdown) {
                errors.set("connection closed before SHUTDOWN");
            }
        } catch (const std::exception& e) {
            errors.set(e.what());
        }
        targets.close();
    });

    // Matcher: settles frames in order and hands bundles to the workers and writers.
    auto settle = [&](std::int64_t target) {
        const auto t = Clock::now();
        std::variant<FrameBundle, Mismatch> result;
        {
            std::lock_guard lock(queues_mutex);
            result = match_frame(queues, ids, target);
        }
        timers.add("match", seconds_since(t));
        settled = target;
        if (auto* m = std::get_if<Mismatch>(&result)) {
            stale += m->stale_discarded;
            skips.push_back({m->frame_id, kSkipMissingSensor, m->detail()});
            sink.add_skip(skips.back());
            return;
        }
        auto& bundle = std::get<FrameBundle>(result);
        ++assembled;
        if (!frame_is_stored(cfg, bundle.frame_id)) {
            return;
        }
        for (std::size_t i = 0; i < n_sensors; ++i) {
            store_queues[i]->push({bundle.frame_id, bundle.payloads[i]});
        }
        snapshot_queue.push({bundle.frame_id, bundle.snapshot});
        bundles.push(std::move(bundle));
    };
    std::thread matcher([&] {
        try {
            while (auto due = targets.pop()) {
                if (due->target > 0) {
                    settle(due->target);
                }
                if (due->tick > 0) {
                    acks.push(due->tick);
                }
            }
        } catch (const std::exception& e) {
            errors.set(e.what());
        }
        acks.close();
        bundles.close();
        for (auto& q : store_queues) {
            q->close();
        }
        snapshot_queue.close();
    });

    // Annotation workers.
    std::vector<std::thread> annotators;
    for (std::size_t k = 0; k < workers; ++k) {
        annotators.emplace_back([&] {
            bool failed = false;
            while (auto bundle = bundles.pop()) {
                if (failed) {
                    continue;  // keep draining so upstream never blocks
                }
                try {
                    const auto t = Clock::now();
                    sink.annotate(*bundle);
                    timers.add("annotate", seconds_since(t));
                } catch (const std::exception& e) {
                    errors.set(e.what());
                    failed = true;
                }
            }
        });
    }

    // One writer thread per sensor, plus one for the snapshot-derived logs.
    std::vector<std::thread> writers;
    for (std::size_t i = 0; i < n_sensors; ++i) {
        writers.emplace_back([&, i] {
            bool failed = false;
            while (auto item = store_queues[i]->pop()) {
                if (failed) {
                    continue;
                }
                try {
                    const auto t = Clock::now();
                    sink.store_payload(i, item->frame_id, *item->bytes);
                    timers.add("store", seconds_since(t));
                } catch (const std::exception& e) {
                    errors.set(e.what());
                    failed = true;
                }
            }
        });
    }
    writers.emplace_back([&] {
        bool failed = false;
        while (auto item = snapshot_queue.pop()) {
            if (failed) {
                continue;
            }
            try {
                sink.store_snapshot(item->frame_id, *item->snapshot);
            } catch (const std::exception& e) {
                errors.set(e.what());
                failed = true;
            }
        }
    });

    // Coordinator: owns the tick loop with at most in_flight_ticks outstanding.
    try {
        std::int64_t sent = 0;
        std::int64_t acked = 0;
        std::vector<Clock::time_point> sent_at;
        while (acked < total) {
            while (sent < total && sent - acked < cfg.in_flight_ticks) {
                sent_at.push_back(Clock::now());
                conn.send(TickReqMsg{});
                ++sent;
            }
            const auto ack = acks.pop();
            if (!ack) {
                break;
            }
            if (*ack != acked + 1) {
                throw ProtocolError("TICK_RESP " + std::to_string(*ack) + " out of order, expected " +
                                    std::to_string(acked + 1));
            }
            timers.add("tick", seconds_since(sent_at[static_cast<std::size_t>(acked)]));
            ++acked;
        }
        if (acked == total) {
            conn.send(ShutdownMsg{});
        }
    } catch (const std::exception& e) {
        errors.set(e.what());
        conn.shutdown_write();
    }

    ingestion.join();
    matcher.join();
    for (auto& t : annotators) {
        t.join();
    }
    for (auto& t : writers) {
        t.join();
    }
    report.skips = std::move(skips);
    report.error = errors.get();
    report.aborted = !report.error.empty();
    skip_unsettled(report, sink, settled);
    try {
        sink.finish(total, assembled);
    } catch (const std::exception& e) {
        report.error = report.error.empty() ? e.what() : report.error;
        report.aborted = true;
    }
    report.wall_time_s = seconds_since(t0);

    report.frames_assembled = assembled;
    report.stale_discarded = stale;
    report.max_queue_depth = max_depth;
    report.stages = timers.snapshot();
    finalize_counts(report);
    return report;
}

// ---------------------------------------------------------------------------
// Baseline collector: every stage inline, one tick at a time.

EpisodeReport run_episode_baseline(const ValidatedConfig& vcfg, Connection& conn, std::uint32_t episode,
                                   const CollectOptions& options) {
    const RunConfig& cfg = vcfg.get();
    EpisodeReport report = make_report(vcfg, episode, options, 1);
    handshake(cfg, conn, episode);

    const std::int64_t total = report.frames_requested;
    const int lag = matcher_lag(cfg);
    const auto ids = sensor_ids_of(cfg);

    EpisodeSink sink(cfg, episode, report.episode_dir);
    StageTimers timers;
    FrameQueues queues(ids.size());
    std::int64_t assembled = 0;
    std::int64_t settled = 0;

    auto settle = [&](std::int64_t target) {
        auto t = Clock::now();
        auto result = match_frame(queues, ids, target);
        timers.add("match", seconds_since(t));
        settled = target;
        if (auto* m = std::get_if<Mismatch>(&result)) {
            report.stale_discarded += m->stale_discarded;
            report.skips.push_back({m->frame_id, kSkipMissingSensor, m->detail()});
            sink.add_skip(report.skips.back());
            return;
        }
        const auto& bundle = std::get<FrameBundle>(result);
        ++assembled;
        if (!frame_is_stored(cfg, bundle.frame_id)) {
            return;
        }
        t = Clock::now();
        sink.annotate(bundle);
        timers.add("annotate", seconds_since(t));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            t = Clock::now();
            sink.store_payload(i, bundle.frame_id, *bundle.payloads[i]);
            timers.add("store", seconds_since(t));
        }
        sink.store_snapshot(bundle.frame_id, *bundle.snapshot);
    };

    // Receives until TICK_RESP (returns its frame) or SHUTDOWN (returns -1).
    auto pump = [&]() -> std::int64_t {
        while (auto message = conn.receive()) {
            const std::int64_t tag = demux(std::move(*message), queues, ids);
            report.max_queue_depth = std::max(report.max_queue_depth, queues.max_depth());
            if (tag != 0) {
                return tag;
            }
        }
        throw TransportError("connection closed before SHUTDOWN");
    };

    const auto t0 = Clock::now();
    try {
        std::int64_t n = 0;
        for (; n < total; ++n) {
            const auto t = Clock::now();
            conn.send(TickReqMsg{});
            const std::int64_t frame = pump();
            if (frame != n + 1) {
                throw ProtocolError("TICK_RESP " + std::to_string(frame) + " out of order, expected " +
                                    std::to_string(n + 1));
            }
            timers.add("tick", seconds_since(t));
            if (frame - lag >= 1) {
                settle(frame - lag);
            }
        }
        conn.send(ShutdownMsg{});
        if (pump() != -1) {
            throw ProtocolError("expected SHUTDOWN echo");
        }
        for (std::int64_t f : drain_targets(n, lag)) {
            settle(f);
        }
    } catch (const std::exception& e) {
        report.error = e.what();
        report.aborted = true;
    }
    skip_unsettled(report, sink, settled);
    try {
        sink.finish(total, assembled);
    } catch (const std::exception& e) {
        if (report.error.empty()) {
            report.error = e.what();
        }
        report.aborted = true;
    }
    report.wall_time_s = seconds_since(t0);
    report.frames_assembled = assembled;
    report.stages = timers.snapshot();
    finalize_counts(report);
    return report;
}

EpisodeReport run_episode(const ValidatedConfig& cfg, Connection& conn, std::uint32_t episode,
                          const CollectOptions& options) {
    return options.mode == CollectMode::Pipelined ? run_episode_pipelined(cfg, conn, episode, options)
                                                  : run_episode_baseline(cfg, conn, episode, options);
}

bool RunReport::ok() const {
    return std::none_of(episodes.begin(), episodes.end(), [](const EpisodeReport& e) { return e.aborted; });
}

RunReport collect(const ValidatedConfig& cfg, Connection& conn, const CollectOptions& options) {
    RunReport run;
    run.mode = options.mode;
    run.workers = options.mode == CollectMode::Baseline ? 1
                  : options.workers == 0                ? default_parallelism()
                                                        : options.workers;
    const fs::path out = options.output_dir.empty() ? fs::path(cfg->output_dir) : options.output_dir;
    fs::create_directories(out);
    const auto t0 = Clock::now();
    for (int e = 1; e <= cfg->episodes; ++e) {
        run.episodes.push_back(run_episode(cfg, conn, static_cast<std::uint32_t>(e), options));
        write_file_atomic(run.episodes.back().episode_dir / "report.json", episode_report_json(run.episodes.back()));
        if (run.episodes.back().aborted) {
            break;
        }
    }
    run.wall_time_s = seconds_since(t0);
    write_file_atomic(out / "report.json", run_report_json(run));
    return run;
}

// ---------------------------------------------------------------------------
// report.json

namespace {

json episode_json(const EpisodeReport& r) {
    json stages = json::object();
    for (const auto& [name, s] : r.stages) {
        json buckets = json::array();
        for (std::size_t i = 0; i < s.buckets.size(); ++i) {
            const json upper = i < StageStats::kBucketUpperMs.size() ? json(StageStats::kBucketUpperMs[i]) : json(nullptr);
            buckets.push_back(json{{"le_ms", upper}, {"count", s.buckets[i]}});
        }
        stages[name] = json{{"count", s.count},
                            {"total_s", s.total_s},
                            {"mean_s", s.count ? s.total_s / static_cast<double>(s.count) : 0.0},
                            {"max_s", s.max_s},
                            {"histogram", buckets}};
    }
    json skips = json::array();
    for (const auto& s : r.skips) {
        skips.push_back(json{{"frame_id", s.frame_id}, {"reason", s.reason}, {"detail", s.detail}});
    }
    return json{{"episode", r.episode},
                {"mode", std::string(to_string(r.mode))},
                {"workers", r.workers},
                {"frames_requested", r.frames_requested},
                {"frames_assembled", r.frames_assembled},
                {"frames_skipped", r.frames_skipped},
                {"skips", skips},
                {"stale_discarded", r.stale_discarded},
                {"max_queue_depth", r.max_queue_depth},
                {"wall_time_s", r.wall_time_s},
                {"aborted", r.aborted},
                {"error", r.error},
                {"episode_dir", r.episode_dir.string()},
                {"stages", stages}};
}

}  // namespace

std::string episode_report_json(const EpisodeReport& r) {
    return episode_json(r).dump(2) + "\n";
}

std::string run_report_json(const RunReport& r) {
    json episodes = json::array();
    for (const auto& e : r.episodes) {
        episodes.push_back(episode_json(e));
    }
    return json{{"mode", std::string(to_string(r.mode))},
                {"workers", r.workers},
                {"ok", r.ok()},
                {"wall_time_s", r.wall_time_s},
                {"episodes", episodes}}
               .dump(2) +
           "\n";
}

}  // namespace simsync
