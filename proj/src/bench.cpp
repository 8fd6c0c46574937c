#include "simsync/bench.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "simsync/server.hpp"
#include "simsync/store.hpp"

namespace simsync {

std::string_view to_string(BenchAxis axis) {
    switch (axis) {
        case BenchAxis::Frames: return "frames";
        case BenchAxis::Cameras: return "cameras";
        case BenchAxis::Lidars: return "lidars";
    }
    return "unknown";
}

BenchAxis bench_axis_from_string(std::string_view name) {
    if (name == "frames") return BenchAxis::Frames;
    if (name == "cameras") return BenchAxis::Cameras;
    if (name == "lidars") return BenchAxis::Lidars;
    throw std::invalid_argument("unknown bench axis '" + std::string(name) + "'");
}

namespace {

SensorSpec camera(const std::string& id, SensorKind kind, double yaw, int w, int h) {
    SensorSpec s;
    s.sensor_id = id;
    s.kind = kind;
    s.mount_pose.location = {0.5, 0.0, 1.7};
    s.mount_pose.rotation.yaw = yaw;
    s.fov_deg = 90.0;
    s.width = w;
    s.height = h;
    return s;
}

SensorSpec lidar(const std::string& id, double z) {
    SensorSpec s;
    s.sensor_id = id;
    s.kind = SensorKind::Lidar;
    s.mount_pose.location = {0.0, 0.0, z};
    s.channels = 32;
    s.points_per_second = 600000;
    s.range_m = 100.0;
    return s;
}

SensorSpec simple(const std::string& id, SensorKind kind) {
    SensorSpec s;
    s.sensor_id = id;
    s.kind = kind;
    return s;
}

constexpr double kCameraYaws[] = {0.0, -90.0, 90.0, 180.0, -45.0, 45.0, -135.0, 135.0};

}  // namespace

RunConfig desk_scale_config(bool full_scale) {
    RunConfig cfg;
    cfg.fps = 30;
    cfg.duration_s = full_scale ? 2000.0 / 30.0 : 10.0;
    cfg.image_width = full_scale ? 1280 : 640;
    cfg.image_height = full_scale ? 720 : 360;
    cfg.num_vehicles = full_scale ? 50 : 10;
    cfg.num_pedestrians = full_scale ? 50 : 10;
    cfg.seed = 7;
    cfg.max_substep_dt_s = 1.0 / 120.0;
    cfg.max_substeps = 10;
    cfg.save_ego_motion = true;
    for (int i = 0; i < 4; ++i) {
        cfg.sensors.push_back(
            camera("rgb" + std::to_string(i), SensorKind::Rgb, kCameraYaws[i], cfg.image_width, cfg.image_height));
    }
    cfg.sensors.push_back(camera("depth0", SensorKind::Depth, 0.0, cfg.image_width, cfg.image_height));
    cfg.sensors.push_back(lidar("lidar0", 2.4));
    cfg.sensors.push_back(simple("imu0", SensorKind::Imu));
    cfg.sensors.push_back(simple("gnss0", SensorKind::Gnss));
    return cfg;
}

RunConfig apply_axis(const RunConfig& base, BenchAxis axis, int value) {
    if (value < (axis == BenchAxis::Frames ? 1 : 0)) {
        throw std::invalid_argument("axis value out of range: " + std::to_string(value));
    }
    RunConfig cfg = base;
    if (axis == BenchAxis::Frames) {
        cfg.duration_s = static_cast<double>(value) / cfg.fps;
        return cfg;
    }
    const SensorKind kind = axis == BenchAxis::Cameras ? SensorKind::Rgb : SensorKind::Lidar;
    std::vector<SensorSpec> kept;
    std::vector<SensorSpec> others;
    for (const auto& s : cfg.sensors) {
        (s.kind == kind ? kept : others).push_back(s);
    }
    std::vector<SensorSpec> sensors;
    for (int i = 0; i < value; ++i) {
        if (kind == SensorKind::Rgb) {
            const double yaw = kCameraYaws[static_cast<std::size_t>(i) % std::size(kCameraYaws)];
            sensors.push_back(
                camera("rgb" + std::to_string(i), SensorKind::Rgb, yaw, cfg.image_width, cfg.image_height));
        } else {
            sensors.push_back(lidar("lidar" + std::to_string(i), 2.4 + 0.1 * i));
        }
    }
    sensors.insert(sensors.end(), others.begin(), others.end());
    cfg.sensors = std::move(sensors);
    return cfg;
}

EpisodeReport run_pair(const ValidatedConfig& cfg, CollectMode mode, const fs::path& output_dir,
                       const BenchOptions& options) {
    auto [client, server_end] = connection_pair();
    std::fflush(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) {
        throw std::runtime_error("fork failed");
    }
    if (pid == 0) {
        client.close();
        int code = 0;
        try {
            ServerOptions so;
            so.render_workers = options.render_workers;
            SimServer server(cfg, so);
            const auto sessions = server.serve_connection(server_end, 1);
            code = sessions.size() == 1 && sessions[0].error.empty() ? 0 : 1;
        } catch (...) {
            code = 1;
        }
        server_end.close();
        ::_exit(code);
    }
    server_end.close();
    CollectOptions co;
    co.mode = mode;
    co.workers = options.workers;
    co.output_dir = output_dir;
    EpisodeReport report;
    try {
        report = run_episode(cfg, client, 1, co);
    } catch (...) {
        client.close();
        int status = 0;
        ::waitpid(pid, &status, 0);
        throw;
    }
    client.close();
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (!report.aborted && !(WIFEXITED(status) && WEXITSTATUS(status) == 0)) {
        report.aborted = true;
        report.error = "server process failed";
    }
    return report;
}

namespace {

std::vector<char> read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every regular file under `root` except run reports and converted output.
std::vector<fs::path> compared_files(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) {
            continue;
        }
        const fs::path rel = fs::relative(e.path(), root);
        const std::string first = rel.begin()->string();
        if (rel == "report.json" || first == "converted") {
            continue;
        }
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::string compare_episodes(const fs::path& a, const fs::path& b) {
    const auto fa = compared_files(a);
    const auto fb = compared_files(b);
    if (fa != fb) {
        return "file sets differ (" + std::to_string(fa.size()) + " vs " + std::to_string(fb.size()) + " files)";
    }
    for (const auto& rel : fa) {
        if (read_all(a / rel) != read_all(b / rel)) {
            return "content differs: " + rel.string();
        }
    }
    return "";
}

std::vector<BenchSample> run_scaling_experiment(BenchAxis axis, const std::vector<int>& values, const RunConfig& base,
                                                const BenchOptions& options) {
    if (options.repetitions < 1) {
        throw std::invalid_argument("repetitions must be at least 1");
    }
    const fs::path scratch =
        options.scratch_dir.empty() ? fs::temp_directory_path() / ("simsync_bench_" + std::to_string(::getpid()))
                                    : options.scratch_dir;
    fs::create_directories(scratch);
    std::vector<BenchSample> samples;
    for (int value : values) {
        const ValidatedConfig cfg = require_valid(apply_axis(base, axis, value));
        double convert_s[2] = {0.0, 0.0};

        if (options.verify_equivalence || options.measure_conversion) {
            const fs::path dir_b = scratch / "verify_baseline";
            const fs::path dir_p = scratch / "verify_pipelined";
            fs::remove_all(dir_b);
            fs::remove_all(dir_p);
            const auto rb = run_pair(cfg, CollectMode::Baseline, dir_b, options);
            const auto rp = run_pair(cfg, CollectMode::Pipelined, dir_p, options);
            if (rb.aborted || rp.aborted) {
                throw EquivalenceError("verification run aborted: " + (rb.aborted ? rb.error : rp.error));
            }
            if (options.verify_equivalence) {
                const std::string diff = compare_episodes(rb.episode_dir, rp.episode_dir);
                if (!diff.empty()) {
                    throw EquivalenceError(std::string(to_string(axis)) + "=" + std::to_string(value) +
                                           ": baseline and pipelined outputs differ: " + diff);
                }
            }
            if (options.measure_conversion) {
                int k = 0;
                for (const auto* r : {&rb, &rp}) {
                    const auto t = std::chrono::steady_clock::now();
                    convert_outputs(r->episode_dir / "manifest.json", options.workers);
                    convert_s[k++] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
                }
            }
            fs::remove_all(dir_b);
            fs::remove_all(dir_p);
        }

        for (int rep = 1; rep <= options.repetitions; ++rep) {
            for (CollectMode mode : {CollectMode::Baseline, CollectMode::Pipelined}) {
                BenchSample s;
                s.axis = axis;
                s.value = value;
                s.mode = mode;
                s.rep = rep;
                s.convert_s = convert_s[mode == CollectMode::Baseline ? 0 : 1];
                const fs::path dir = scratch / "run";
                fs::remove_all(dir);
                try {
                    const auto r = run_pair(cfg, mode, dir, options);
                    s.wall_s = r.wall_time_s;
                    s.failed = r.aborted;
                    s.error = r.error;
                } catch (const std::exception& e) {
                    s.failed = true;
                    s.error = e.what();
                }
                fs::remove_all(dir);
                if (options.verbose) {
                    std::cerr << to_string(axis) << '=' << value << ' ' << to_string(mode) << " rep " << rep << ": "
                              << (s.failed ? "FAILED " + s.error : std::to_string(s.wall_s) + " s") << '\n';
                }
                samples.push_back(std::move(s));
            }
        }
    }
    if (options.scratch_dir.empty()) {
        fs::remove_all(scratch);
    }
    return samples;
}

std::vector<BenchResult> aggregate(const std::vector<BenchSample>& samples) {
    std::vector<BenchResult> results;
    for (const auto& s : samples) {
        auto it = std::find_if(results.begin(), results.end(), [&](const BenchResult& r) {
            return r.axis == s.axis && r.value == s.value && r.mode == s.mode;
        });
        if (it == results.end()) {
            results.push_back({s.axis, s.value, s.mode, {}, 0, 0.0, 0.0, false, s.convert_s});
            it = results.end() - 1;
        }
        if (s.failed) {
            ++it->failures;
        } else {
            it->wall_s.push_back(s.wall_s);
        }
    }
    for (auto& r : results) {
        const auto n = static_cast<double>(r.wall_s.size());
        if (r.wall_s.empty()) {
            continue;
        }
        r.mean = std::accumulate(r.wall_s.begin(), r.wall_s.end(), 0.0) / n;
        r.single_rep = r.wall_s.size() == 1;
        if (!r.single_rep) {
            double ss = 0.0;
            for (double v : r.wall_s) {
                ss += (v - r.mean) * (v - r.mean);
            }
            r.std = std::sqrt(ss / (n - 1.0));
        }
    }
    std::sort(results.begin(), results.end(), [](const BenchResult& a, const BenchResult& b) {
        return std::tie(a.value, a.mode) < std::tie(b.value, b.mode);
    });
    return results;
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("least squares needs at least two paired points");
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) {
        throw std::invalid_argument("least squares needs two distinct x values");
    }
    return sxy / sxx;
}

double speedup(double baseline_mean, double pipelined_mean) {
    if (!(pipelined_mean > 0.0)) {
        throw std::invalid_argument("pipelined mean must be positive");
    }
    return baseline_mean / pipelined_mean;
}

BenchSummary summarize(BenchAxis axis, const std::vector<BenchSample>& samples) {
    BenchSummary s;
    s.axis = axis;
    s.results = aggregate(samples);
    for (const auto& b : s.results) {
        if (b.mode != CollectMode::Baseline || b.wall_s.empty()) {
            continue;
        }
        for (const auto& p : s.results) {
            if (p.mode == CollectMode::Pipelined && p.value == b.value && !p.wall_s.empty()) {
                s.speedups.emplace_back(b.value, speedup(b.mean, p.mean));
            }
        }
    }
    std::vector<double> xb, yb, xp, yp;
    for (const auto& sample : samples) {
        if (sample.failed) {
            continue;
        }
        auto& x = sample.mode == CollectMode::Baseline ? xb : xp;
        auto& y = sample.mode == CollectMode::Baseline ? yb : yp;
        x.push_back(sample.value);
        y.push_back(sample.wall_s);
    }
    try {
        s.baseline_slope = least_squares_slope(xb, yb);
        s.pipelined_slope = least_squares_slope(xp, yp);
        s.slopes_defined = true;
    } catch (const std::invalid_argument&) {
        s.slopes_defined = false;
    }
    return s;
}

std::string results_csv(const std::vector<BenchSample>& samples) {
    std::ostringstream out;
    out << "axis,value,mode,rep,wall_s\n";
    char buf[64];
    for (const auto& s : samples) {
        if (s.failed) {
            std::snprintf(buf, sizeof(buf), "nan");
        } else {
            std::snprintf(buf, sizeof(buf), "%.6f", s.wall_s);
        }
        out << to_string(s.axis) << ',' << s.value << ',' << to_string(s.mode) << ',' << s.rep << ',' << buf << '\n';
    }
    return out.str();
}

std::string summary_csv(const BenchSummary& summary) {
    std::ostringstream out;
    out << "axis,value,mode,reps,failures,mean_s,std_s,std_flag,speedup,convert_s\n";
    char buf[256];
    for (const auto& r : summary.results) {
        double sp = std::nan("");
        for (const auto& [v, x] : summary.speedups) {
            if (v == r.value) {
                sp = x;
            }
        }
        std::snprintf(buf, sizeof(buf), "%s,%d,%s,%zu,%d,%.6f,%.6f,%s,%.4f,%.6f\n",
                      std::string(to_string(r.axis)).c_str(), r.value, std::string(to_string(r.mode)).c_str(),
                      r.wall_s.size(), r.failures, r.mean, r.std, r.single_rep ? "single_rep" : "",
                      sp, r.convert_s);
        out << buf;
    }
    if (summary.slopes_defined) {
        std::snprintf(buf, sizeof(buf), "# slope_s_per_unit baseline=%.6f pipelined=%.6f\n", summary.baseline_slope,
                      summary.pipelined_slope);
        out << buf;
    }
    return out.str();
}

std::string plot_svg(const BenchSummary& summary) {
    constexpr double kW = 640, kH = 400, kL = 70, kR = 140, kT = 30, kB = 50;
    double xmin = 1e300, xmax = -1e300, ymax = 0.0;
    for (const auto& r : summary.results) {
        xmin = std::min(xmin, static_cast<double>(r.value));
        xmax = std::max(xmax, static_cast<double>(r.value));
        for (double v : r.wall_s) {
            ymax = std::max(ymax, v);
        }
        ymax = std::max(ymax, r.mean + r.std);
    }
    if (summary.results.empty()) {
        xmin = 0;
        xmax = 1;
    }
    if (xmax == xmin) {
        xmax = xmin + 1;
    }
    if (ymax <= 0.0) {
        ymax = 1.0;
    }
    ymax *= 1.1;
    auto px = [&](double x) { return kL + (x - xmin) / (xmax - xmin) * (kW - kL - kR); };
    auto py = [&](double y) { return kH - kB - y / ymax * (kH - kT - kB); };

    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << kL << "\" y1=\"" << py(0) << "\" x2=\"" << kW - kR << "\" y2=\"" << py(0)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = ymax * i / 4.0;
        out << "<text x=\"" << kL - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << y << "</text>\n";
    }
    for (const auto& r : summary.results) {
        if (r.mode == CollectMode::Baseline) {
            out << "<text x=\"" << px(r.value) << "\" y=\"" << py(0) + 18 << "\" text-anchor=\"middle\">" << r.value
                << "</text>\n";
        }
    }
    out << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">"
        << to_string(summary.axis) << "</text>\n";
    out << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" transform=\"rotate(-90 16 " << (kT + kH - kB) / 2
        << ")\" text-anchor=\"middle\">wall time (s)</text>\n";

    int legend = 0;
    for (CollectMode mode : {CollectMode::Baseline, CollectMode::Pipelined}) {
        const char* color = mode == CollectMode::Baseline ? "#c0392b" : "#2471a3";
        std::string points;
        for (const auto& r : summary.results) {
            if (r.mode != mode || r.wall_s.empty()) {
                continue;
            }
            std::ostringstream pt;
            pt.setf(std::ios::fixed);
            pt.precision(2);
            pt << px(r.value) << ',' << py(r.mean) << ' ';
            points += pt.str();
            out << "<line x1=\"" << px(r.value) << "\" y1=\"" << py(r.mean - r.std) << "\" x2=\"" << px(r.value)
                << "\" y2=\"" << py(r.mean + r.std) << "\" stroke=\"" << color << "\"/>\n";
            out << "<circle cx=\"" << px(r.value) << "\" cy=\"" << py(r.mean) << "\" r=\"3\" fill=\"" << color
                << "\"/>\n";
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << points
            << "\"/>\n";
        out << "<rect x=\"" << kW - kR + 12 << "\" y=\"" << kT + 20 * legend << "\" width=\"12\" height=\"12\" fill=\""
            << color << "\"/>\n";
        out << "<text x=\"" << kW - kR + 30 << "\" y=\"" << kT + 20 * legend + 11 << "\">" << to_string(mode)
            << "</text>\n";
        ++legend;
    }
    out << "</svg>\n";
    return out.str();
}

void write_bench_outputs(const fs::path& out_dir, const std::vector<BenchSample>& samples,
                         const BenchSummary& summary) {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "results.csv", results_csv(samples));
    write_file_atomic(out_dir / "summary.csv", summary_csv(summary));
    write_file_atomic(out_dir / ("plot_" + std::string(to_string(summary.axis)) + ".svg"), plot_svg(summary));
}

}  // namespace simsync
