#include "simsync/server.hpp"

#include <algorithm>
#include <deque>
#include <future>
#include <numeric>

#include "simsync/payloads.hpp"
#include "simsync/rng.hpp"
#include "simsync/thread_pool.hpp"

namespace simsync {

namespace {

struct Pending {
    std::int64_t frame_id;
    std::vector<std::uint8_t> bytes;
};

// Per-tick emission order over sensor indices, seeded by (seed, frame).
std::vector<std::size_t> emission_order(std::size_t n, std::uint64_t seed, std::int64_t frame_id) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(derive_seed(seed, 0xE3150000ULL + static_cast<std::uint64_t>(frame_id)));
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
}

class Session {
public:
    Session(const ValidatedConfig& cfg, const ServerOptions& options, ThreadPool& pool, std::uint32_t episode,
            std::uint64_t seed)
        : cfg_(cfg.get()), options_(options), pool_(pool), plan_(derive_timing(cfg)), seed_(seed),
          world_(spawn_world(cfg, seed, options.world)), pending_(cfg_.sensors.size()) {
        summary_.episode = episode;
    }

    void tick(Connection& conn) {
        const ActorState prev_ego = world_.ego();
        world_ = step_world(world_, plan_);
        const std::int64_t n = world_.frame_id;

        std::vector<std::future<std::vector<std::uint8_t>>> renders;
        renders.reserve(cfg_.sensors.size());
        for (const auto& spec : cfg_.sensors) {
            renders.push_back(pool_.submit([this, &spec, &prev_ego] {
                return render_sensor(world_, prev_ego, spec, plan_.fixed_timestep_s);
            }));
        }
        for (std::size_t i = 0; i < renders.size(); ++i) {
            pending_[i].push_back({n, renders[i].get()});
        }

        out_.clear();
        append_message(snapshot_of(world_), out_);
        for (std::size_t i : emission_order(cfg_.sensors.size(), seed_, n)) {
            auto& queue = pending_[i];
            if (!queue.empty() && queue.front().frame_id + cfg_.sensors[i].lag_frames <= n) {
                emit(i, queue.front());
                queue.pop_front();
            }
        }
        append_message(TickRespMsg{static_cast<std::uint64_t>(n)}, out_);
        conn.send_bytes(out_);
        ++summary_.ticks;
    }

    void shutdown(Connection& conn) {
        out_.clear();
        for (std::int64_t f = world_.frame_id - cfg_.max_lag_frames; f <= world_.frame_id; ++f) {
            for (std::size_t i : emission_order(cfg_.sensors.size(), seed_, f)) {
                auto& queue = pending_[i];
                if (!queue.empty() && queue.front().frame_id == f) {
                    emit(i, queue.front());
                    queue.pop_front();
                }
            }
        }
        append_message(ShutdownMsg{}, out_);
        conn.send_bytes(out_);
        summary_.clean_shutdown = true;
    }

    SessionSummary& summary() { return summary_; }

private:
    void emit(std::size_t sensor, Pending& p) {
        const auto& spec = cfg_.sensors[sensor];
        if (options_.drop_payloads.contains({spec.sensor_id, p.frame_id})) {
            ++summary_.payloads_dropped;
            return;
        }
        SensorPayloadMsg msg{spec.sensor_id, static_cast<std::uint64_t>(p.frame_id),
                             static_cast<std::uint8_t>(spec.kind), std::move(p.bytes)};
        append_message(msg, out_);
        ++summary_.payloads_sent;
    }

    const RunConfig& cfg_;
    const ServerOptions& options_;
    ThreadPool& pool_;
    TimingPlan plan_;
    std::uint64_t seed_;
    WorldState world_;
    std::vector<std::deque<Pending>> pending_;
    std::vector<std::uint8_t> out_;
    SessionSummary summary_;
};

}  // namespace

SimServer::SimServer(ValidatedConfig cfg, ServerOptions options)
    : cfg_(std::move(cfg)), options_(std::move(options)), digest_(config_digest(cfg_.get())) {}

std::uint64_t episode_world_seed(std::uint64_t run_seed, std::uint32_t episode) {
    return derive_seed(run_seed, 0xE9150DE0000ULL + episode);
}

std::uint64_t SimServer::episode_seed(std::uint32_t episode) const {
    return episode_world_seed(cfg_->seed, episode);
}

std::vector<SessionSummary> SimServer::serve_connection(Connection& conn, int max_sessions) {
    ThreadPool pool(options_.render_workers == 0 ? default_parallelism() : options_.render_workers);
    std::vector<SessionSummary> done;
    std::optional<Session> session;

    auto fail = [&](const std::string& message) {
        conn.send(ErrorMsg{message});
        SessionSummary s = session ? session->summary() : SessionSummary{};
        s.error = message;
        done.push_back(s);
    };

    while (auto message = conn.receive()) {
        if (auto* hello = std::get_if<HelloMsg>(&*message)) {
            if (session) {
                fail("HELLO received inside an active session");
                return done;
            }
            if (hello->version != kProtocolVersion) {
                fail("protocol version mismatch: server " + std::to_string(kProtocolVersion) + ", client " +
                     std::to_string(hello->version));
                return done;
            }
            if (hello->config_digest != digest_) {
                fail("config digest mismatch");
                return done;
            }
            session.emplace(cfg_, options_, pool, hello->episode, episode_seed(hello->episode));
            conn.send(HelloMsg{kProtocolVersion, digest_, hello->episode});
        } else if (std::holds_alternative<TickReqMsg>(*message)) {
            if (!session) {
                fail("tick received before HELLO");
                return done;
            }
            session->tick(conn);
        } else if (std::holds_alternative<ShutdownMsg>(*message)) {
            if (!session) {
                fail("SHUTDOWN received before HELLO");
                return done;
            }
            session->shutdown(conn);
            done.push_back(session->summary());
            session.reset();
            if (max_sessions >= 0 && static_cast<int>(done.size()) >= max_sessions) {
                return done;
            }
        } else {
            fail("unexpected message kind " + std::to_string(static_cast<int>(kind_of(*message))) + " from client");
            return done;
        }
    }
    if (session) {
        SessionSummary s = session->summary();
        s.error = "connection closed mid-session";
        done.push_back(s);
    }
    return done;
}

std::vector<SessionSummary> serve(const ValidatedConfig& cfg, const std::string& endpoint, ServerOptions options) {
    SimServer server(cfg, std::move(options));
    Listener listener(endpoint);
    std::vector<SessionSummary> all;
    const int wanted = cfg->episodes;
    while (static_cast<int>(all.size()) < wanted) {
        Connection conn = listener.accept();
        auto sessions = server.serve_connection(conn, wanted - static_cast<int>(all.size()));
        all.insert(all.end(), sessions.begin(), sessions.end());
    }
    return all;
}

}  // namespace simsync
