#pragma once

// End-to-end commands behind the `lf` tool. Every command validates the
// configuration and loads all of its inputs before the first file is
// written, and each output goes through a temp-file rename.

#include <chrono>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfr/config.hpp"
#include "lfr/error.hpp"
#include "lfr/io.hpp"
#include "lfr/lightfield.hpp"
#include "lfr/neural.hpp"
#include "lfr/optics.hpp"
#include "lfr/report.hpp"
#include "lfr/scene.hpp"
#include "lfr/sparse.hpp"

namespace lfr::pipeline {

namespace fs = std::filesystem;
using config::Backend;
using config::ExperimentConfig;
using nlohmann::json;

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) { }
    double lap()
    {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - start_).count();
        start_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Calls fn(i) for i in [0, count) on `workers` threads with a fixed
/// interleaved assignment; the first exception is rethrown.
template <typename F>
void parallel_for(std::size_t count, std::size_t workers, F&& fn)
{
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers)
                    fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure)
                    failure = std::current_exception();
            }
        });
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Backends on in-memory data

namespace detail {

inline std::vector<Origin> checked_origins(const optics::CodedCamera& cam, const Measurement& frame, std::size_t stride)
{
    cam.check_frame(Dims4{frame.width(), frame.height(), cam.patch().theta, cam.patch().phi});
    if (frame.samples() != cam.samples_per_pixel())
        throw DimensionError("reconstruct: measurement has " + std::to_string(frame.samples())
            + " samples per pixel, camera expects " + std::to_string(cam.samples_per_pixel()));
    auto origins = grid_origins(frame.width(), frame.height(), PatchGridSpec{cam.patch(), stride});
    for (const auto& o : origins)
        cam.phase_index(o);
    return origins;
}

/// Per-patch solve with one solver per tile phase, built before the workers start.
template <typename Solver, typename Make>
LightField patchwise(const optics::CodedCamera& cam, const Measurement& frame, std::size_t stride, std::size_t workers,
    Make make)
{
    const auto origins = checked_origins(cam, frame, stride);
    std::vector<std::unique_ptr<Solver>> solvers(cam.phase_count());
    for (const auto& o : origins) {
        auto& s = solvers[cam.phase_index(o)];
        if (!s)
            s = make(cam.op_at(o));
    }
    std::vector<Patch4D> patches(origins.size());
    parallel_for(origins.size(), workers, [&](std::size_t i) {
        const auto meas = cam.patch_measurement(frame, origins[i]);
        patches[i] = {solvers[cam.phase_index(origins[i])]->reconstruct(meas), origins[i]};
    });
    return stitch_patches(patches, Dims4{frame.width(), frame.height(), cam.patch().theta, cam.patch().phi});
}

} // namespace detail

inline LightField reconstruct_pinv(const optics::CodedCamera& cam, const Measurement& frame, std::size_t stride,
    const config::PinvConfig& cfg, std::size_t workers = 1)
{
    if (cfg.window > 1) {
        detail::checked_origins(cam, frame, stride);
        return optics::stacked_pinv(cam, frame, cfg.window, cfg.ridge);
    }
    return detail::patchwise<optics::PinvSolver>(cam, frame, stride, workers,
        [&](const optics::SensingOperator& op) { return std::make_unique<optics::PinvSolver>(op, cfg.ridge); });
}

inline LightField reconstruct_dict(const optics::CodedCamera& cam, const Measurement& frame, std::size_t stride,
    const sparse::Dictionary& dict, const sparse::SparseReconConfig& cfg, std::size_t workers = 1)
{
    if (static_cast<std::size_t>(dict.dim()) != cam.patch().count())
        throw DimensionError("reconstruct: dictionary atoms have " + std::to_string(dict.dim())
            + " entries, patch has " + std::to_string(cam.patch().count()));
    return detail::patchwise<sparse::SparseReconstructor>(cam, frame, stride, workers,
        [&](const optics::SensingOperator& op) { return std::make_unique<sparse::SparseReconstructor>(op, dict, cfg); });
}

/// Ground-truth patches at seeded uniform-random origins, one per column.
inline Eigen::MatrixXd sample_truth_patches(
    const std::vector<LightField>& fields, const Dims4& patch, std::size_t count, std::uint64_t seed)
{
    if (fields.empty())
        throw Error("dataset: no training light fields");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(patch.count()), static_cast<Eigen::Index>(count));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, fields.size() - 1);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& lf = fields[pick(rng)];
        std::uniform_int_distribution<std::size_t> ox(0, lf.dims().x - patch.x), oy(0, lf.dims().y - patch.y);
        const Origin o{ox(rng), oy(rng)};
        out.col(static_cast<Eigen::Index>(i)) = optics::vectorize(extract_patch(lf, o, patch).values.values());
    }
    return out;
}

// ---------------------------------------------------------------------------
// File helpers

namespace detail {

inline fs::path output(const ExperimentConfig& c, const fs::path& p, const char* key)
{
    if (p.empty())
        throw Error(std::string("config: paths.") + key + " is required for this command");
    const auto r = c.resolve(p);
    if (fs::is_directory(r))
        throw Error(std::string("config: paths.") + key + " names a directory: " + r.string());
    return r;
}

inline fs::path input(const ExperimentConfig& c, const fs::path& p, const char* key)
{
    if (p.empty())
        throw Error(std::string("config: paths.") + key + " is required for this command");
    const auto r = c.resolve(p);
    if (!fs::is_regular_file(r))
        throw Error(std::string("input paths.") + key + " not found: " + r.string());
    return r;
}

inline void write_text(const fs::path& path, const std::string& s)
{
    io::write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

inline json read_json(const fs::path& path)
{
    const auto bytes = io::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void check_angular(const LightField& lf, const Dims4& patch, const fs::path& from)
{
    if (lf.dims().theta != patch.theta || lf.dims().phi != patch.phi || lf.dims().x < patch.x
        || lf.dims().y < patch.y)
        throw DimensionError(from.string() + ": light field " + to_string(lf.dims())
            + " is incompatible with patch " + to_string(patch));
}

inline std::vector<LightField> load_training(const ExperimentConfig& c)
{
    if (c.paths.training_light_fields.empty())
        throw Error("config: paths.training_light_fields is required for this command");
    std::vector<LightField> out;
    for (const auto& p : c.paths.training_light_fields) {
        const auto r = input(c, p, "training_light_fields");
        out.push_back(io::load_lf(r));
        check_angular(out.back(), c.camera.patch, r);
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct SynthResult {
    std::vector<fs::path> written;
};

/// Writes the two-plane test scene to paths.light_field and one training
/// scene (seeds scene.seed + 1, + 2, ...) per paths.training_light_fields entry.
inline SynthResult cmd_synth(const ExperimentConfig& c)
{
    c.validate();
    const auto& s = c.scene.spec;
    if (s.n_theta != c.camera.patch.theta || s.n_phi != c.camera.patch.phi)
        throw Error("config: scene angular dims do not match the camera patch");
    std::vector<std::pair<fs::path, LightField>> out;
    if (!c.paths.light_field.empty())
        out.emplace_back(detail::output(c, c.paths.light_field, "light_field"), scene::make_two_plane(s));
    for (std::size_t i = 0; i < c.paths.training_light_fields.size(); ++i) {
        auto t = s;
        t.seed = s.seed + 1 + i;
        out.emplace_back(detail::output(c, c.paths.training_light_fields[i], "training_light_fields"),
            scene::make_two_plane(t));
    }
    if (out.empty())
        throw Error("config: synth needs paths.light_field or paths.training_light_fields");
    SynthResult r;
    for (const auto& [p, lf] : out) {
        io::save_lf(p, lf);
        r.written.push_back(p);
    }
    return r;
}

struct SimulateResult {
    Dims4 dims;
    std::size_t measurements_per_pixel = 0;
    double compression_ratio = 0.0;
    json descriptor;
};

inline json operator_descriptor(const ExperimentConfig& c, const Dims4& frame)
{
    const auto noise = c.noise();
    return json{{"operator", optics::to_json(c.camera)}, {"measurements_per_pixel", c.camera.measurements_per_pixel()},
        {"compression_ratio", c.camera.compression_ratio()},
        {"noise", {{"sigma", noise.sigma}, {"seed", noise.seed}}}, {"frame", {frame.x, frame.y}}};
}

inline SimulateResult cmd_simulate(const ExperimentConfig& c)
{
    c.validate();
    const auto in = detail::input(c, c.paths.light_field, "light_field");
    const auto meas_path = detail::output(c, c.paths.measurement, "measurement");
    const auto op_path = detail::output(c, c.paths.operator_file, "operator");
    const LightField lf = io::load_lf(in);
    const optics::CodedCamera cam(c.camera);
    const Measurement frame = optics::add_noise(cam.capture_frame(lf), c.noise());

    SimulateResult r;
    r.dims = lf.dims();
    r.measurements_per_pixel = c.camera.measurements_per_pixel();
    r.compression_ratio = c.camera.compression_ratio();
    r.descriptor = operator_descriptor(c, lf.dims());
    io::save_measurement(meas_path, frame);
    detail::write_text(op_path, r.descriptor.dump(2) + "\n");
    return r;
}

struct TrainDictResult {
    std::size_t atoms = 0;
    std::vector<double> objective;
};

inline TrainDictResult cmd_train_dict(const ExperimentConfig& c)
{
    c.validate();
    const auto dict_path = detail::output(c, c.paths.dictionary, "dictionary");
    const auto csv_path = detail::output(c, c.paths.dictionary_csv, "dictionary_csv");
    const auto fields = detail::load_training(c);
    const auto& patch = c.camera.patch;
    const std::size_t k = c.dict.atom_count(patch);
    if (c.dict.train_patches < k)
        throw Error("config: dict.train_patches (" + std::to_string(c.dict.train_patches)
            + ") must be at least the number of atoms (" + std::to_string(k) + ")");

    const Eigen::MatrixXd samples
        = sample_truth_patches(fields, patch, c.dict.train_patches, config::derive_seed(c.seed, config::Stream::dict_samples));
    sparse::KsvdOptions opt;
    opt.atoms = k;
    opt.sparsity = c.dict.sparsity;
    opt.iterations = c.dict.iterations;
    opt.seed = config::derive_seed(c.seed, config::Stream::dict_init);
    auto res = sparse::ksvd_train(samples, opt);

    std::string csv = "iteration,objective\n";
    char buf[64];
    for (std::size_t i = 0; i < res.objective.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, res.objective[i]);
        csv += buf;
    }
    sparse::save_dictionary(dict_path, res.dict);
    detail::write_text(csv_path, csv);
    return {k, std::move(res.objective)};
}

struct TrainNetResult {
    neural::TrainResult train;
    std::size_t parameters = 0;
};

/// Captures every training light field with the configured camera (plus
/// optional training noise), samples patches and runs the phase schedule.
inline neural::Dataset build_net_dataset(const ExperimentConfig& c, const std::vector<LightField>& fields)
{
    const optics::CodedCamera cam(c.camera);
    std::vector<Measurement> frames;
    frames.reserve(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i)
        frames.push_back(optics::add_noise(cam.capture_frame(fields[i]),
            {c.net.train_noise_sigma, config::derive_seed(c.seed, config::Stream::train_noise, i)}));
    std::vector<neural::CaptureSource> sources;
    for (std::size_t i = 0; i < fields.size(); ++i)
        sources.push_back({&fields[i], &cam, &frames[i]});
    return neural::sample_patches(sources, c.net.train_patches, config::derive_seed(c.seed, config::Stream::net_samples));
}

inline TrainNetResult cmd_train_net(
    const ExperimentConfig& c, const std::function<void(const neural::EpochRecord&)>& progress = {})
{
    c.validate();
    const auto ckpt_path = detail::output(c, c.paths.checkpoint, "checkpoint");
    const auto csv_path = detail::output(c, c.paths.loss_csv, "loss_csv");
    const auto fields = detail::load_training(c);
    if (c.net.train_patches == 0)
        throw Error("config: net.train_patches must be >= 1");

    const auto ds = build_net_dataset(c, fields);
    auto model = neural::make_model<float>(c.net.model_spec(c.camera), config::derive_seed(c.seed, config::Stream::net_init));
    auto tc = c.net.train;
    tc.seed = config::derive_seed(c.seed, config::Stream::net_train);
    TrainNetResult r;
    r.train = neural::train(model, ds, tc, progress);
    r.parameters = neural::parameter_count(model);
    neural::save_checkpoint(ckpt_path, model);
    detail::write_text(csv_path, neural::loss_csv(r.train.history));
    return r;
}

struct ReconstructResult {
    LightField lf;
    json sidecar;
};

inline ReconstructResult cmd_reconstruct(const ExperimentConfig& c)
{
    c.validate();
    Stopwatch clock;
    std::map<std::string, double> seconds;
    const auto meas_path = detail::input(c, c.paths.measurement, "measurement");
    const auto out_path = detail::output(c, c.paths.reconstruction, "reconstruction");
    const auto sidecar_path = c.reconstruction_sidecar();
    double sigma = c.noise_sigma;
    if (!c.paths.operator_file.empty()) {
        const auto desc = detail::read_json(detail::input(c, c.paths.operator_file, "operator"));
        if (desc.at("operator") != optics::to_json(c.camera))
            throw Error("reconstruct: the camera in the config differs from the operator the measurement was made with");
        sigma = desc.at("noise").at("sigma").get<double>();
    }
    const Measurement frame = io::load_measurement(meas_path);
    const optics::CodedCamera cam(c.camera);

    sparse::Dictionary dict;
    neural::TwoBranchModel<float> model;
    if (c.backend == Backend::dict)
        dict = sparse::load_dictionary(detail::input(c, c.paths.dictionary, "dictionary"));
    if (c.backend == Backend::net)
        model = neural::load_checkpoint<float>(detail::input(c, c.paths.checkpoint, "checkpoint"));
    seconds["load"] = clock.lap();

    ReconstructResult r;
    switch (c.backend) {
    case Backend::pinv:
        r.lf = reconstruct_pinv(cam, frame, c.stride, c.pinv, c.workers);
        break;
    case Backend::dict:
        r.lf = reconstruct_dict(cam, frame, c.stride, dict, c.dict.solver, c.workers);
        break;
    case Backend::net:
        r.lf = neural::reconstruct_lf(
            model, cam, frame, PatchGridSpec{cam.patch(), c.stride}, c.workers, c.net.inference_batch);
        break;
    }
    seconds["reconstruct"] = clock.lap();
    io::save_lf(out_path, r.lf);
    seconds["write"] = clock.lap();

    r.sidecar = json{{"backend", config::to_string(c.backend)}, {"stride", c.stride}, {"workers", c.workers},
        {"compression_ratio", c.camera.compression_ratio()}, {"noise_sigma", sigma},
        {"dims", optics::dims_to_json(r.lf.dims())}, {"seconds", seconds}};
    detail::write_text(sidecar_path, r.sidecar.dump(2) + "\n");
    return r;
}

inline report::EvalReport cmd_eval(const ExperimentConfig& c)
{
    c.validate();
    Stopwatch clock;
    const auto truth_path = detail::input(c, c.paths.light_field, "light_field");
    const auto recon_path = detail::input(c, c.paths.reconstruction, "reconstruction");
    const auto out_path = detail::output(c, c.paths.report, "report");
    const LightField truth = io::load_lf(truth_path);
    const LightField recon = io::load_lf(recon_path);
    json side = json::object();
    if (fs::is_regular_file(c.reconstruction_sidecar()))
        side = detail::read_json(c.reconstruction_sidecar());

    auto r = report::evaluate(truth, recon);
    r.backend = side.value("backend", config::to_string(c.backend));
    r.stride = side.value("stride", c.stride);
    r.compression_ratio = side.value("compression_ratio", c.camera.compression_ratio());
    r.noise_sigma = side.value("noise_sigma", c.noise_sigma);
    if (side.contains("seconds"))
        r.seconds = side.at("seconds").get<std::map<std::string, double>>();
    r.seconds["eval"] = clock.lap();
    detail::write_text(out_path, report::to_json(r).dump(2) + "\n");
    return r;
}

struct ReportResult {
    std::string csv;
    bool mosaic = false;
    bool heatmap = false;
};

/// CSV over paths.reports (default: paths.report), plus the optional view
/// mosaic of the reconstruction and the per-view error heatmap.
inline ReportResult cmd_report(const ExperimentConfig& c)
{
    c.validate();
    const auto csv_path = detail::output(c, c.paths.report_csv, "report_csv");
    std::vector<fs::path> inputs = c.paths.reports;
    if (inputs.empty())
        inputs.push_back(c.paths.report);
    std::vector<std::pair<std::string, report::EvalReport>> rows;
    for (const auto& p : inputs) {
        const auto r = detail::input(c, p, "reports");
        try {
            rows.emplace_back(p.stem().string(), report::from_json(detail::read_json(r)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(r.string() + ": " + e.what());
        }
    }

    ReportResult res;
    res.csv = report::csv_table(rows);
    std::optional<report::Raster> mosaic, heat;
    fs::path mosaic_path, heat_path;
    if (!c.paths.mosaic_png.empty()) {
        mosaic_path = detail::output(c, c.paths.mosaic_png, "mosaic_png");
        std::vector<LightField> ch;
        if (!c.paths.reconstruction_channels.empty()) {
            for (const auto& p : c.paths.reconstruction_channels)
                ch.push_back(io::load_lf(detail::input(c, p, "reconstruction_channels")));
        } else {
            ch.push_back(io::load_lf(detail::input(c, c.paths.reconstruction, "reconstruction")));
        }
        std::vector<const LightField*> ptr;
        for (const auto& lf : ch)
            ptr.push_back(&lf);
        mosaic = report::view_mosaic(ptr);
    }
    if (!c.paths.error_png.empty()) {
        heat_path = detail::output(c, c.paths.error_png, "error_png");
        const auto truth = io::load_lf(detail::input(c, c.paths.light_field, "light_field"));
        const auto recon = io::load_lf(detail::input(c, c.paths.reconstruction, "reconstruction"));
        heat = report::error_heatmap(truth, recon);
    }

    detail::write_text(csv_path, res.csv);
    if (mosaic) {
        report::write_png(mosaic_path, *mosaic);
        res.mosaic = true;
    }
    if (heat) {
        report::write_png(heat_path, *heat);
        res.heatmap = true;
    }
    return res;
}

} // namespace lfr::pipeline
