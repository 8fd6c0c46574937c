#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "simsync/config.hpp"
#include "simsync/transport.hpp"
#include "simsync/world.hpp"

namespace simsync {

struct ServerOptions {
    std::size_t render_workers = 0;  // 0 = host parallelism
    WorldParams world;
    // Fault injection: (sensor_id, frame_id) payloads that are rendered but never sent.
    std::set<std::pair<std::string, std::int64_t>> drop_payloads;
};

struct SessionSummary {
    std::uint32_t episode = 0;
    std::int64_t ticks = 0;
    std::uint64_t payloads_sent = 0;
    std::uint64_t payloads_dropped = 0;
    bool clean_shutdown = false;
    std::string error;
};

// World seed of 1-based episode `episode` of a run seeded with `run_seed`.
std::uint64_t episode_world_seed(std::uint64_t run_seed, std::uint32_t episode);

// Lock-step world server. For every TICK_REQ it advances the world exactly
// one frame, emits ACTOR_SNAPSHOT(N), then SENSOR_PAYLOAD for each sensor
// whose due frame N - lag_frames is >= 1 (in a seeded per-tick order), then
// TICK_RESP(N). SHUTDOWN flushes the lagged payloads and is echoed back.
class SimServer {
public:
    explicit SimServer(ValidatedConfig cfg, ServerOptions options = {});

    // Serves consecutive sessions on one connection until EOF, an error, or
    // `max_sessions` sessions (negative = unlimited) have completed.
    std::vector<SessionSummary> serve_connection(Connection& conn, int max_sessions = -1);

    // Episode e of a run uses this world seed.
    std::uint64_t episode_seed(std::uint32_t episode) const;

private:
    ValidatedConfig cfg_;
    ServerOptions options_;
    std::uint64_t digest_;
};

// Listens on `endpoint` and serves cfg.episodes sessions, accepting new
// connections as needed.
std::vector<SessionSummary> serve(const ValidatedConfig& cfg, const std::string& endpoint,
                                  ServerOptions options = {});

}  // namespace simsync
