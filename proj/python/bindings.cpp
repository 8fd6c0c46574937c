// Python bindings: config checks, the depth codec, annotation math, and
// in-process episode collection and conversion.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <future>
#include <string>
#include <vector>

#include "simsync/annotate.hpp"
#include "simsync/bench.hpp"
#include "simsync/config.hpp"
#include "simsync/pipeline.hpp"
#include "simsync/protocol.hpp"
#include "simsync/server.hpp"
#include "simsync/store.hpp"
#include "simsync/transport.hpp"
#include "simsync/world.hpp"

namespace py = pybind11;

namespace {

using namespace simsync;

std::vector<std::string> validation_errors(const std::string& config_json) {
    const auto result = validate_config(parse_run_config(config_json));
    if (const auto* errors = std::get_if<std::vector<std::string>>(&result)) {
        return *errors;
    }
    return {};
}

py::dict timing(const std::string& config_json) {
    const auto plan = derive_timing(require_valid(parse_run_config(config_json)));
    py::dict d;
    d["total_frames"] = plan.total_frames;
    d["fixed_timestep_s"] = plan.fixed_timestep_s;
    d["substeps_per_frame"] = plan.substeps_per_frame;
    d["substep_dt_s"] = plan.substep_dt_s;
    return d;
}

py::array_t<std::uint8_t> encode_depth(py::array_t<double, py::array::c_style | py::array::forcecast> meters,
                                       int channels) {
    if (meters.ndim() != 2) {
        throw std::invalid_argument("depth must be a 2-D array");
    }
    DepthImage d;
    d.height = static_cast<int>(meters.shape(0));
    d.width = static_cast<int>(meters.shape(1));
    d.meters.assign(meters.data(), meters.data() + meters.size());
    const auto encoded = encode_depth_rgb(d, channels);
    py::array_t<std::uint8_t> out({d.height, d.width, channels});
    std::copy(encoded.bytes.begin(), encoded.bytes.end(), out.mutable_data());
    return out;
}

py::array_t<double> decode_depth_array(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> encoded) {
    if (encoded.ndim() != 3) {
        throw std::invalid_argument("encoded depth must be an H x W x C array");
    }
    const int height = static_cast<int>(encoded.shape(0));
    const int width = static_cast<int>(encoded.shape(1));
    const int channels = static_cast<int>(encoded.shape(2));
    const auto d = decode_depth({encoded.data(), static_cast<std::size_t>(encoded.size())}, width, height, channels);
    py::array_t<double> out({height, width});
    std::copy(d.meters.begin(), d.meters.end(), out.mutable_data());
    return out;
}

// Runs one episode against a server thread over a socket pair and returns
// the episode report as JSON text, also written to <episode>/report.json.
std::string run_local_episode(const std::string& config_json, const std::string& output_dir, const std::string& mode,
                              std::size_t workers) {
    const auto cfg = require_valid(parse_run_config(config_json));
    CollectOptions options;
    options.mode = collect_mode_from_string(mode);
    options.workers = workers;
    options.output_dir = output_dir;
    py::gil_scoped_release release;
    auto [client, server_conn] = connection_pair();
    auto server = std::async(std::launch::async, [&] {
        SimServer s(cfg, ServerOptions{});
        return s.serve_connection(server_conn, 1);
    });
    EpisodeReport report;
    try {
        report = run_episode(cfg, client, 1, options);
    } catch (...) {
        client.shutdown_write();
        server.wait();
        throw;
    }
    client.shutdown_write();
    server.get();
    const std::string text = episode_report_json(report);
    write_file_atomic(report.episode_dir / "report.json", text);
    return text;
}

py::dict convert(const std::string& manifest_path, std::size_t workers) {
    ConvertSummary s;
    {
        py::gil_scoped_release release;
        s = convert_outputs(manifest_path, workers);
    }
    py::dict d;
    d["files_written"] = s.files_written;
    d["clamped_depth_pixels"] = s.clamped_depth_pixels;
    return d;
}

}  // namespace

PYBIND11_MODULE(_simsync, m) {
    m.doc() = "Synchronized multi-sensor data collection";

    static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
    static py::exception<StoreError> store_error(m, "StoreError", PyExc_RuntimeError);
    static py::exception<ProtocolError> protocol_error(m, "ProtocolError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            py::set_error(config_error, e.what());
        } catch (const StoreError& e) {
            py::set_error(store_error, e.what());
        } catch (const ProtocolError& e) {
            py::set_error(protocol_error, e.what());
        }
    });

    m.def("validation_errors", &validation_errors, py::arg("config_json"),
          "Constraint violations of a JSON run config; empty when valid.");
    m.def("derive_timing", &timing, py::arg("config_json"));
    m.def("canonical_config", [](const std::string& s) { return serialize_config(parse_run_config(s)); },
          py::arg("config_json"));
    m.def("config_digest", [](const std::string& s) { return config_digest(parse_run_config(s)); },
          py::arg("config_json"));

    m.def("encode_depth", &encode_depth, py::arg("meters"), py::arg("channels") = 3);
    m.def("decode_depth", &decode_depth_array, py::arg("encoded"));
    m.def("decode_depth_code", &decode_depth_code, py::arg("r"), py::arg("g"), py::arg("b"));

    m.def("classify_occlusion", &classify_occlusion, py::arg("visible_vertices"));
    m.def("truncation_ratio", &truncation_ratio, py::arg("visible_vertices"));
    m.def("rotation_angle", &rotation_angle, py::arg("yaw_object_deg"), py::arg("yaw_sensor_deg"));
    m.def(
        "observation_angle",
        [](double theta_y, double x, double y, double z) { return observation_angle(theta_y, {x, y, z}); },
        py::arg("theta_y"), py::arg("x"), py::arg("y"), py::arg("z") = 0.0);

    m.def(
        "batch_file_size",
        [](int width, int height, int fps) {
            SensorSpec spec;
            spec.kind = SensorKind::Rgb;
            spec.width = width;
            spec.height = height;
            return batch_file_size(spec, fps);
        },
        py::arg("width"), py::arg("height"), py::arg("fps"));

    m.def("run_local_episode", &run_local_episode, py::arg("config_json"), py::arg("output_dir"),
          py::arg("mode") = "pipelined", py::arg("workers") = 0);
    m.def("convert_outputs", &convert, py::arg("manifest_path"), py::arg("workers") = 0);
    m.def("load_manifest", [](const std::string& path) { return manifest_to_json(load_manifest(path)); },
          py::arg("path"));
    m.def("compare_episodes", [](const std::string& a, const std::string& b) { return compare_episodes(a, b); },
          py::arg("a"), py::arg("b"));
}
