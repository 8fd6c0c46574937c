// simsync: lock-step simulation server, synchronized collector, converter and benchmark.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "simsync/bench.hpp"
#include "simsync/config.hpp"
#include "simsync/pipeline.hpp"
#include "simsync/server.hpp"
#include "simsync/store.hpp"
#include "simsync/transport.hpp"

namespace {

constexpr int kExitConfigError = 2;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
};

simsync::ValidatedConfig load_config(const std::string& path, const Overrides& o) {
    simsync::RunConfig cfg = simsync::load_run_config(path);
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (o.output_dir) {
        cfg.output_dir = *o.output_dir;
    }
    return simsync::require_valid(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simsync: synchronized multi-sensor data collection"};
    app.require_subcommand(1);

    std::string config_path;
    std::string endpoint;
    std::string mode = "pipelined";
    std::size_t workers = 0;
    std::string manifest;
    Overrides overrides;

    auto add_overrides = [&](CLI::App* sub) {
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](const std::uint64_t& v) { overrides.seed = v; }, "Override the config seed");
        sub->add_option_function<std::string>(
            "--output-dir", [&](const std::string& v) { overrides.output_dir = v; }, "Override the config output_dir");
    };

    auto* validate = app.add_subcommand("validate", "Parse and validate a run config");
    validate->add_option("--config", config_path, "Run config (JSON)")->required();
    add_overrides(validate);

    auto* serve = app.add_subcommand("serve", "Run the simulation server");
    serve->add_option("--config", config_path, "Run config (JSON)")->required();
    serve->add_option("--listen", endpoint, "Unix socket path to listen on")->required();
    serve->add_option("--workers", workers, "Render threads (0 = host parallelism)");
    add_overrides(serve);

    auto* collect = app.add_subcommand("collect", "Collect episodes from a running server");
    collect->add_option("--config", config_path, "Run config (JSON)")->required();
    collect->add_option("--connect", endpoint, "Unix socket path of the server")->required();
    collect->add_option("--mode", mode, "pipelined or baseline")->check(CLI::IsMember({"pipelined", "baseline"}));
    collect->add_option("--workers", workers, "Annotation workers (0 = host parallelism)");
    add_overrides(collect);

    auto* convert = app.add_subcommand("convert", "Convert a collected episode to PNG/XYZ/CSV");
    convert->add_option("--manifest", manifest, "Episode manifest.json")->required();
    convert->add_option("--workers", workers, "Conversion threads (0 = host parallelism)");

    std::string axis;
    std::vector<int> values;
    int reps = 10;
    std::string bench_mode = "both";
    std::string out_dir = "bench_out";
    bool full_scale = false;
    bool no_verify = false;
    auto* bench = app.add_subcommand("bench", "Scaling benchmark: baseline vs pipelined");
    bench->add_option("--axis", axis, "frames, cameras or lidars")
        ->required()
        ->check(CLI::IsMember({"frames", "cameras", "lidars"}));
    bench->add_option("--values", values, "Axis values")->required()->delimiter(',');
    bench->add_option("--reps", reps, "Repetitions per (value, mode)")->check(CLI::PositiveNumber);
    bench->add_option("--mode", bench_mode, "Only 'both' is supported")->check(CLI::IsMember({"both"}));
    bench->add_option("--out", out_dir, "Output directory");
    bench->add_option("--config", config_path, "Base config (default: desk-scale preset)");
    bench->add_option("--workers", workers, "Pipelined annotation workers (0 = host parallelism)");
    bench->add_flag("--full-scale", full_scale, "Use the full-scale preset instead of desk scale");
    bench->add_flag("--no-verify", no_verify, "Skip the output-equivalence verification runs");
    add_overrides(bench);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) {
            auto cfg = load_config(config_path, overrides);
            const auto plan = simsync::derive_timing(cfg);
            std::cout << "valid: " << plan.total_frames << " frames, dt " << plan.fixed_timestep_s << " s, "
                      << plan.substeps_per_frame << " substeps of " << plan.substep_dt_s << " s\n";
            return 0;
        }
        if (*serve) {
            auto cfg = load_config(config_path, overrides);
            simsync::ServerOptions options;
            options.render_workers = workers;
            const auto sessions = simsync::serve(cfg, endpoint, options);
            int failed = 0;
            for (const auto& s : sessions) {
                std::cerr << "episode " << s.episode << ": " << s.ticks << " ticks, " << s.payloads_sent
                          << " payloads" << (s.error.empty() ? "" : ", error: " + s.error) << '\n';
                failed += s.error.empty() ? 0 : 1;
            }
            return failed == 0 ? 0 : 1;
        }
        if (*collect) {
            auto cfg = load_config(config_path, overrides);
            auto conn = simsync::connect_to(endpoint);
            simsync::CollectOptions options;
            options.mode = simsync::collect_mode_from_string(mode);
            options.workers = workers;
            const auto run = simsync::collect(cfg, conn, options);
            for (const auto& e : run.episodes) {
                std::cerr << "episode " << e.episode << ": " << e.frames_assembled << "/" << e.frames_requested
                          << " assembled, " << e.frames_skipped << " skipped, " << e.wall_time_s << " s"
                          << (e.aborted ? ", aborted: " + e.error : "") << '\n';
            }
            return run.ok() ? 0 : 1;
        }
        if (*convert) {
            const auto summary = simsync::convert_outputs(manifest, workers);
            std::cerr << summary.files_written << " files written, " << summary.clamped_depth_pixels
                      << " depth pixels clamped to 65535 mm\n";
            return 0;
        }
        if (*bench) {
            simsync::RunConfig base = simsync::desk_scale_config(full_scale);
            if (!config_path.empty()) {
                base = simsync::load_run_config(config_path);
            }
            if (overrides.seed) {
                base.seed = *overrides.seed;
            }
            simsync::require_valid(base);
            simsync::BenchOptions options;
            options.repetitions = reps;
            options.workers = workers;
            options.verify_equivalence = !no_verify;
            options.verbose = true;
            if (overrides.output_dir) {
                options.scratch_dir = *overrides.output_dir;
            }
            const auto a = simsync::bench_axis_from_string(axis);
            const auto samples = simsync::run_scaling_experiment(a, values, base, options);
            const auto summary = simsync::summarize(a, samples);
            simsync::write_bench_outputs(out_dir, samples, summary);
            std::cout << simsync::summary_csv(summary);
            return 0;
        }
    } catch (const simsync::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
