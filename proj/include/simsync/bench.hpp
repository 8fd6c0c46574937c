#pragma once

// Scaling experiments: wall time of the baseline and pipelined collectors
// against frame count, camera count or LiDAR count.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "simsync/config.hpp"
#include "simsync/pipeline.hpp"

namespace simsync {

namespace fs = std::filesystem;

enum class BenchAxis { Frames, Cameras, Lidars };
std::string_view to_string(BenchAxis axis);
BenchAxis bench_axis_from_string(std::string_view name);

// 300 frames at 30 fps, 640x360, 10 vehicles + 10 pedestrians, 4 rgb + 1 depth
// + 1 lidar + imu + gnss. `full_scale` gives 2000 frames, 1280x720, 50 + 50.
RunConfig desk_scale_config(bool full_scale = false);

// The base config with the axis set to `value` (frames: total frame count;
// cameras: number of rgb cameras; lidars: number of lidar sensors).
RunConfig apply_axis(const RunConfig& base, BenchAxis axis, int value);

struct BenchSample {
    BenchAxis axis = BenchAxis::Frames;
    int value = 0;
    CollectMode mode = CollectMode::Baseline;
    int rep = 0;
    double wall_s = 0.0;
    double convert_s = 0.0;  // measured once per (value, mode), outside the collection timing
    bool failed = false;
    std::string error;
};

struct BenchResult {
    BenchAxis axis = BenchAxis::Frames;
    int value = 0;
    CollectMode mode = CollectMode::Baseline;
    std::vector<double> wall_s;  // successful repetitions only
    int failures = 0;
    double mean = 0.0;
    double std = 0.0;            // sample standard deviation
    bool single_rep = false;     // std is reported as 0 when only one sample exists
    double convert_s = 0.0;
};

struct BenchOptions {
    int repetitions = 10;
    std::size_t workers = 0;        // pipelined annotation workers
    std::size_t render_workers = 0;  // server render pool
    bool verify_equivalence = true;
    bool measure_conversion = true;
    fs::path scratch_dir;  // run outputs; removed after each run
    bool verbose = false;
};

// Thrown when a verification run finds baseline and pipelined outputs differ.
class EquivalenceError : public std::runtime_error {
public:
    explicit EquivalenceError(const std::string& what) : std::runtime_error(what) {}
};

// Runs one server+collector pair: the server in a forked child over a socket
// pair, the collector in this process. Returns the episode report.
EpisodeReport run_pair(const ValidatedConfig& cfg, CollectMode mode, const fs::path& output_dir,
                       const BenchOptions& options);

// Byte-for-byte comparison of two episode directories (raw batches, logs,
// labels, manifest). Returns a description of the first difference, or "".
std::string compare_episodes(const fs::path& a, const fs::path& b);

std::vector<BenchSample> run_scaling_experiment(BenchAxis axis, const std::vector<int>& values,
                                                const RunConfig& base, const BenchOptions& options);

std::vector<BenchResult> aggregate(const std::vector<BenchSample>& samples);

// Least-squares slope of y over x. Throws std::invalid_argument for fewer
// than two distinct x values.
double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y);

// baseline_mean / pipelined_mean.
double speedup(double baseline_mean, double pipelined_mean);

struct BenchSummary {
    BenchAxis axis = BenchAxis::Frames;
    std::vector<BenchResult> results;
    std::vector<std::pair<int, double>> speedups;  // value -> speedup
    double baseline_slope = 0.0;                   // seconds per axis unit, over all samples
    double pipelined_slope = 0.0;
    bool slopes_defined = false;
};

BenchSummary summarize(BenchAxis axis, const std::vector<BenchSample>& samples);

std::string results_csv(const std::vector<BenchSample>& samples);
std::string summary_csv(const BenchSummary& summary);
std::string plot_svg(const BenchSummary& summary);

// Writes results.csv, summary.csv and plot_<axis>.svg into `out_dir`.
void write_bench_outputs(const fs::path& out_dir, const std::vector<BenchSample>& samples,
                         const BenchSummary& summary);

}  // namespace simsync
