#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <variant>

#include "simsync/config.hpp"
#include "simsync/rng.hpp"
#include "test_support.hpp"

using namespace simsync;

namespace {

const char* kMinimal = R"({"fps": 30, "duration_s": 2, "sensors": [{"sensor_id": "cam0", "kind": "rgb"}]})";

std::vector<std::string> errors_of(const RunConfig& cfg) {
    auto result = validate_config(cfg);
    if (auto* e = std::get_if<std::vector<std::string>>(&result)) {
        return *e;
    }
    return {};
}

bool any_contains(const std::vector<std::string>& errors, const std::string& needle) {
    return std::any_of(errors.begin(), errors.end(),
                       [&](const std::string& e) { return e.find(needle) != std::string::npos; });
}

RunConfig with_timing(int fps, double msdt, int ms) {
    RunConfig cfg = fixtures::small_config();
    cfg.fps = fps;
    cfg.duration_s = 1.0;
    cfg.max_substep_dt_s = msdt;
    cfg.max_substeps = ms;
    cfg.sensors = {fixtures::simple_sensor("imu0", SensorKind::Imu)};
    return cfg;
}

}  // namespace

TEST(ConfigParse, MinimalDocumentGetsDefaults) {
    const RunConfig cfg = parse_run_config(kMinimal);
    EXPECT_EQ(cfg.fps, 30);
    EXPECT_EQ(cfg.seed, 0u);
    EXPECT_EQ(cfg.map_id, "Town01");
    ASSERT_EQ(cfg.sensors.size(), 1u);
    EXPECT_EQ(cfg.sensors[0].width, cfg.image_width);
    EXPECT_EQ(cfg.sensors[0].height, cfg.image_height);
    EXPECT_TRUE(std::holds_alternative<ValidatedConfig>(validate_config(cfg)));
}

TEST(ConfigParse, NegativeFpsIsRejected) {
    try {
        parse_run_config(R"({"fps": -5, "duration_s": 2, "sensors": []})");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("fps must be positive"), std::string::npos) << e.what();
    }
    RunConfig cfg = fixtures::small_config();
    cfg.fps = -5;
    EXPECT_TRUE(any_contains(errors_of(cfg), "fps must be positive"));
}

TEST(ConfigParse, UnknownAndMissingKeysAreRejected) {
    EXPECT_THROW(parse_run_config(R"({"fps": 30, "duration_s": 2, "sensors": [], "fpz": 1})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"duration_s": 2, "sensors": []})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"fps": 30, "duration_s": 2, "sensors": [{"kind": "rgb"}]})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"fps": 30, "duration_s": 2, "sensors": [{"sensor_id": "a", "kind": "sonar"}]})"),
                 ConfigError);
    EXPECT_THROW(parse_run_config(R"({"fps": "30", "duration_s": 2, "sensors": []})"), ConfigError);
    EXPECT_THROW(parse_run_config("{not json"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"fps": 30, "duration_s": 2, "sensors": [], "weather": "Snow"})"), ConfigError);
}

TEST(ConfigParse, RandomChoicesResolveDeterministicallyFromTheSeed) {
    const std::string doc =
        R"({"fps": 30, "duration_s": 1, "seed": 99, "map_id": "random", "weather": "random", "sensors": []})";
    const RunConfig a = parse_run_config(doc);
    const RunConfig b = parse_run_config(doc);
    EXPECT_EQ(a.map_id, b.map_id);
    EXPECT_EQ(a.weather, b.weather);
    EXPECT_NE(std::find(known_maps().begin(), known_maps().end(), a.map_id), known_maps().end());
    EXPECT_NE(std::find(known_weathers().begin(), known_weathers().end(), a.weather), known_weathers().end());
}

TEST(ConfigParse, LagTableOverridesPerSensorLag) {
    const RunConfig cfg = parse_run_config(
        R"({"fps": 30, "duration_s": 1, "sensors": [{"sensor_id": "a", "kind": "imu"}],
            "sensor_lag_frames": {"a": 3}})");
    EXPECT_EQ(cfg.sensors[0].lag_frames, 3);
    EXPECT_THROW(parse_run_config(R"({"fps": 30, "duration_s": 1, "sensors": [],
                                      "sensor_lag_frames": {"ghost": 1}})"),
                 ConfigError);
}

TEST(ConfigSerialize, RoundTripIsExact) {
    RunConfig cfg = fixtures::small_config(45, 1234567890123ULL);
    cfg.sensors[2].lag_frames = 2;
    cfg.sensors[0].mount_pose.rotation.yaw = -90.0;
    cfg.max_substep_dt_s = 1.0 / 240.0;
    cfg.capture_every_step = false;
    const RunConfig back = parse_run_config(serialize_config(cfg));
    EXPECT_EQ(back, cfg);
    EXPECT_EQ(config_digest(back), config_digest(cfg));
}

TEST(ConfigDigest, IgnoresOutputDirButNotContent) {
    RunConfig a = fixtures::small_config();
    RunConfig b = a;
    b.output_dir = "/elsewhere";
    EXPECT_EQ(config_digest(a), config_digest(b));
    b.seed += 1;
    EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(ConfigValidate, TimestepExamples) {
    // 1/30 s split into at most 4 substeps of 1/120 s: exactly feasible.
    EXPECT_TRUE(errors_of(with_timing(30, 1.0 / 120.0, 4)).empty());
    // 2 substeps of 1/120 s cover only 1/60 s.
    EXPECT_TRUE(any_contains(errors_of(with_timing(30, 1.0 / 120.0, 2)), "exceeds max_substep_dt_s"));
    // One substep of 1/120 s covers 1/120 s exactly.
    EXPECT_TRUE(errors_of(with_timing(120, 1.0 / 120.0, 1)).empty());
}

TEST(ConfigValidate, ReportsEveryViolation) {
    RunConfig cfg = fixtures::small_config();
    cfg.fps = 0;
    cfg.image_width = -1;
    cfg.sensors.push_back(cfg.sensors[0]);  // duplicate id
    cfg.sensors[1].lag_frames = cfg.max_lag_frames + 1;
    const auto errors = errors_of(cfg);
    EXPECT_TRUE(any_contains(errors, "fps must be positive"));
    EXPECT_TRUE(any_contains(errors, "image_width"));
    EXPECT_TRUE(any_contains(errors, "duplicate sensor_id"));
    EXPECT_TRUE(any_contains(errors, "lag_frames"));
    EXPECT_THROW(require_valid(cfg), ConfigError);
}

TEST(ConfigValidate, ActorIdSpaceIsSixteenBits) {
    RunConfig cfg = fixtures::small_config();
    cfg.num_vehicles = 40000;
    cfg.num_pedestrians = 25535;  // + ego = 65536
    EXPECT_TRUE(any_contains(errors_of(cfg), "65536"));
    cfg.num_pedestrians = 25534;
    EXPECT_FALSE(any_contains(errors_of(cfg), "65536"));
}

TEST(ConfigTiming, SubstepExamples) {
    // dt = 1/30 with msdt = 1/120: n = 4 substeps of 1/120.
    auto plan = derive_timing(require_valid(with_timing(30, 1.0 / 120.0, 4)));
    EXPECT_EQ(plan.substeps_per_frame, 4);
    EXPECT_NEAR(plan.substep_dt_s, 1.0 / 120.0, 1e-15);
    EXPECT_EQ(plan.total_frames, 30);
    plan = derive_timing(require_valid(with_timing(120, 1.0 / 120.0, 1)));
    EXPECT_EQ(plan.substeps_per_frame, 1);
    // 10 s at 30 fps.
    RunConfig cfg = with_timing(30, 1.0 / 120.0, 10);
    cfg.duration_s = 10.0;
    plan = derive_timing(require_valid(cfg));
    EXPECT_EQ(plan.total_frames, 300);
    EXPECT_DOUBLE_EQ(plan.fixed_timestep_s, 1.0 / 30.0);
}

// Gate property on an exact rational grid: msdt = 1/k, so 1/fps <= ms/k holds
// exactly when k <= fps * ms, which integer arithmetic decides without rounding.
TEST(ConfigProperty, TimestepGateMatchesExactArithmetic) {
    SplitMix64 rng(2024);
    for (int i = 0; i < 4000; ++i) {
        const int fps = 1 + static_cast<int>(rng.below(240));
        const int ms = 1 + static_cast<int>(rng.below(20));
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(2 * fps * ms + 2));
        const bool feasible = k <= static_cast<std::int64_t>(fps) * ms;
        const RunConfig cfg = with_timing(fps, 1.0 / static_cast<double>(k), ms);
        const auto errors = errors_of(cfg);
        ASSERT_EQ(errors.empty(), feasible) << "fps=" << fps << " k=" << k << " ms=" << ms;
        if (feasible) {
            const auto plan = derive_timing(require_valid(cfg));
            // Exact minimal n: smallest n with 1/(fps n) <= 1/k, i.e. n = ceil(k / fps).
            const std::int64_t n = std::max<std::int64_t>(1, (k + fps - 1) / fps);
            ASSERT_EQ(plan.substeps_per_frame, n) << "fps=" << fps << " k=" << k << " ms=" << ms;
            ASSERT_LE(plan.substeps_per_frame, ms);
            ASSERT_NEAR(plan.substep_dt_s * plan.substeps_per_frame, plan.fixed_timestep_s, 1e-15);
        }
    }
}

TEST(ConfigProperty, SerializeRoundTripOnRandomConfigs) {
    SplitMix64 rng(77);
    for (int i = 0; i < 200; ++i) {
        RunConfig cfg = fixtures::small_config();
        cfg.seed = rng.next();
        cfg.fps = 1 + static_cast<int>(rng.below(120));
        cfg.duration_s = rng.uniform(0.1, 100.0);
        cfg.max_distance_m = rng.uniform(1.0, 200.0);
        cfg.sensors[0].mount_pose.rotation = {rng.uniform(-180, 180), rng.uniform(-90, 90), rng.uniform(-180, 180)};
        cfg.sensors[0].mount_pose.location = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 3)};
        ASSERT_EQ(parse_run_config(serialize_config(cfg)), cfg);
    }
}
