#pragma once

// Experiment configuration: one JSON document drives every CLI command.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfr/error.hpp"
#include "lfr/neural.hpp"
#include "lfr/optics.hpp"
#include "lfr/scene.hpp"
#include "lfr/sparse.hpp"

namespace lfr::config {

namespace fs = std::filesystem;
using nlohmann::json;

enum class Backend { pinv, dict, net };

inline std::string to_string(Backend b)
{
    switch (b) {
    case Backend::pinv:
        return "pinv";
    case Backend::dict:
        return "dict";
    case Backend::net:
        return "net";
    }
    return "?";
}

inline Backend parse_backend(const std::string& s)
{
    if (s == "pinv")
        return Backend::pinv;
    if (s == "dict")
        return Backend::dict;
    if (s == "net")
        return Backend::net;
    throw Error("config: unknown backend '" + s + "' (expected pinv, dict or net)");
}

/// Independent random streams derived from the master seed.
enum class Stream : std::uint64_t { noise = 1, dict_samples, dict_init, net_samples, net_init, net_train, train_noise };

inline std::uint64_t derive_seed(std::uint64_t master, Stream s, std::uint64_t index = 0)
{
    // splitmix64 finalizer
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(s) * 1000003ULL + index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct PinvConfig {
    double ridge = optics::kDefaultRidge;
    std::size_t window = 1; // >1 switches to the spatially stacked inverse
};

struct DictConfig {
    std::size_t atoms = 0; // 0 = 4x the patch dimension
    std::size_t sparsity = 5;
    std::size_t iterations = 10;
    std::size_t train_patches = 10000;
    sparse::SparseReconConfig solver;

    std::size_t atom_count(const Dims4& patch) const { return atoms ? atoms : 4 * patch.count(); }
};

struct NetConfig {
    std::vector<std::size_t> fc_widths{2025, 768, 2025, 768, 2025, 2025};
    std::vector<std::size_t> lower_channels{8, 8, 8, 8};
    bool trainable_combination = false;
    neural::TrainConfig train;
    std::size_t train_patches = 5000;
    double train_noise_sigma = 0.0;
    std::size_t inference_batch = 32;

    neural::ModelSpec model_spec(const optics::OperatorSpec& cam) const
    {
        neural::ModelSpec s;
        s.patch = cam.patch;
        s.n = cam.measurements_per_pixel();
        s.fc_widths = fc_widths;
        s.lower_channels = lower_channels;
        s.trainable_combination = trainable_combination;
        return s;
    }
};

struct SceneConfig {
    scene::SceneSpec spec;
};

struct Paths {
    fs::path light_field;                     // ground truth / simulate input
    std::vector<fs::path> training_light_fields;
    fs::path measurement;
    fs::path operator_file;                   // regenerable operator descriptor (JSON)
    fs::path dictionary;
    fs::path dictionary_csv;
    fs::path checkpoint;
    fs::path loss_csv;
    fs::path reconstruction;
    std::vector<fs::path> reconstruction_channels; // optional R, G, B reconstructions for the mosaic
    fs::path report;
    std::vector<fs::path> reports;            // report inputs; defaults to {report}
    fs::path report_csv;
    fs::path mosaic_png;
    fs::path error_png;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    optics::OperatorSpec camera;
    std::size_t stride = 9;
    double noise_sigma = 0.0;
    Backend backend = Backend::pinv;
    std::size_t workers = 1;
    PinvConfig pinv;
    DictConfig dict;
    NetConfig net;
    SceneConfig scene;
    Paths paths;
    fs::path base_dir; // relative paths resolve against this; not serialized

    fs::path resolve(const fs::path& p) const
    {
        if (p.empty() || p.is_absolute() || base_dir.empty())
            return p;
        return base_dir / p;
    }

    /// Timing/metadata sidecar written next to the reconstruction.
    fs::path reconstruction_sidecar() const
    {
        if (paths.reconstruction.empty())
            return {};
        auto p = resolve(paths.reconstruction);
        p += ".json";
        return p;
    }

    optics::NoiseSpec noise() const { return {noise_sigma, derive_seed(seed, Stream::noise)}; }

    void validate() const;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline json path_list(const std::vector<fs::path>& v)
{
    json a = json::array();
    for (const auto& p : v)
        a.push_back(p.generic_string());
    return a;
}

inline std::vector<fs::path> path_list(const json& j, const char* key)
{
    std::vector<fs::path> out;
    if (!j.contains(key))
        return out;
    for (const auto& e : j.at(key))
        out.emplace_back(e.get<std::string>());
    return out;
}

inline fs::path path_of(const json& j, const char* key)
{
    return j.contains(key) ? fs::path(j.at(key).get<std::string>()) : fs::path();
}

inline void check_keys(const json& j, const char* section, std::initializer_list<const char*> known)
{
    if (!j.is_object())
        throw Error(std::string("config: section '") + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
            throw Error(std::string("config: unknown key '") + it.key() + "' in " + section);
}

} // namespace detail

inline json to_json(const ExperimentConfig& c)
{
    json sched = json::array();
    for (const auto& p : c.net.train.schedule)
        sched.push_back({{"phase", neural::to_string(p.phase)}, {"epochs", p.epochs}});
    const auto& t = c.net.train;
    const auto& s = c.dict.solver;
    const auto& p = c.paths;
    json paths{{"light_field", p.light_field.generic_string()},
        {"training_light_fields", detail::path_list(p.training_light_fields)},
        {"measurement", p.measurement.generic_string()}, {"operator", p.operator_file.generic_string()},
        {"dictionary", p.dictionary.generic_string()}, {"dictionary_csv", p.dictionary_csv.generic_string()},
        {"checkpoint", p.checkpoint.generic_string()}, {"loss_csv", p.loss_csv.generic_string()},
        {"reconstruction", p.reconstruction.generic_string()},
        {"reconstruction_channels", detail::path_list(p.reconstruction_channels)},
        {"report", p.report.generic_string()}, {"reports", detail::path_list(p.reports)},
        {"report_csv", p.report_csv.generic_string()}, {"mosaic_png", p.mosaic_png.generic_string()},
        {"error_png", p.error_png.generic_string()}};
    return json{{"seed", c.seed}, {"camera", optics::to_json(c.camera)}, {"stride", c.stride},
        {"noise", {{"sigma", c.noise_sigma}}}, {"backend", to_string(c.backend)}, {"workers", c.workers},
        {"pinv", {{"ridge", c.pinv.ridge}, {"window", c.pinv.window}}},
        {"dict",
            {{"atoms", c.dict.atoms}, {"sparsity", c.dict.sparsity}, {"iterations", c.dict.iterations},
                {"train_patches", c.dict.train_patches}, {"lambda", s.lambda}, {"rho", s.rho},
                {"max_iterations", s.max_iterations}, {"abs_tol", s.abs_tol}, {"rel_tol", s.rel_tol}}},
        {"net",
            {{"fc_widths", c.net.fc_widths}, {"lower_channels", c.net.lower_channels},
                {"trainable_combination", c.net.trainable_combination}, {"lr", t.adam.lr},
                {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps},
                {"batch_size", t.batch_size}, {"schedule", sched},
                {"loss", t.loss == neural::LossMode::weighted ? "weighted" : "uniform"},
                {"train_fraction", t.train_fraction},
                {"reset_optimizer_between_phases", t.reset_optimizer_between_phases},
                {"train_patches", c.net.train_patches}, {"train_noise_sigma", c.net.train_noise_sigma},
                {"inference_batch", c.net.inference_batch}}},
        {"scene", c.scene.spec}, {"paths", paths}};
}

inline ExperimentConfig from_json(const json& j)
{
    detail::check_keys(j, "config",
        {"seed", "camera", "stride", "noise", "backend", "workers", "pinv", "dict", "net", "scene", "paths"});
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("camera"))
        c.camera = optics::operator_spec_from_json(j.at("camera"));
    c.stride = j.value("stride", c.stride);
    if (j.contains("noise")) {
        detail::check_keys(j.at("noise"), "noise", {"sigma"});
        c.noise_sigma = j.at("noise").value("sigma", 0.0);
    }
    if (j.contains("backend"))
        c.backend = parse_backend(j.at("backend").get<std::string>());
    c.workers = j.value("workers", c.workers);
    if (j.contains("pinv")) {
        const auto& p = j.at("pinv");
        detail::check_keys(p, "pinv", {"ridge", "window"});
        c.pinv.ridge = p.value("ridge", c.pinv.ridge);
        c.pinv.window = p.value("window", c.pinv.window);
    }
    if (j.contains("dict")) {
        const auto& d = j.at("dict");
        detail::check_keys(d, "dict",
            {"atoms", "sparsity", "iterations", "train_patches", "lambda", "rho", "max_iterations", "abs_tol",
                "rel_tol"});
        auto& s = c.dict.solver;
        c.dict.atoms = d.value("atoms", c.dict.atoms);
        c.dict.sparsity = d.value("sparsity", c.dict.sparsity);
        c.dict.iterations = d.value("iterations", c.dict.iterations);
        c.dict.train_patches = d.value("train_patches", c.dict.train_patches);
        s.lambda = d.value("lambda", s.lambda);
        s.rho = d.value("rho", s.rho);
        s.max_iterations = d.value("max_iterations", s.max_iterations);
        s.abs_tol = d.value("abs_tol", s.abs_tol);
        s.rel_tol = d.value("rel_tol", s.rel_tol);
    }
    if (j.contains("net")) {
        const auto& n = j.at("net");
        detail::check_keys(n, "net",
            {"fc_widths", "lower_channels", "trainable_combination", "lr", "beta1", "beta2", "eps", "batch_size",
                "schedule", "loss", "train_fraction", "reset_optimizer_between_phases", "train_patches",
                "train_noise_sigma", "inference_batch"});
        auto& t = c.net.train;
        c.net.fc_widths = n.value("fc_widths", c.net.fc_widths);
        c.net.lower_channels = n.value("lower_channels", c.net.lower_channels);
        c.net.trainable_combination = n.value("trainable_combination", c.net.trainable_combination);
        t.adam.lr = n.value("lr", t.adam.lr);
        t.adam.beta1 = n.value("beta1", t.adam.beta1);
        t.adam.beta2 = n.value("beta2", t.adam.beta2);
        t.adam.eps = n.value("eps", t.adam.eps);
        t.batch_size = n.value("batch_size", t.batch_size);
        if (n.contains("schedule")) {
            t.schedule.clear();
            for (const auto& e : n.at("schedule"))
                t.schedule.push_back({neural::parse_phase(e.at("phase").get<std::string>()),
                    e.at("epochs").get<std::size_t>()});
        }
        if (n.contains("loss")) {
            const auto l = n.at("loss").get<std::string>();
            if (l != "weighted" && l != "uniform")
                throw Error("config: net.loss must be 'weighted' or 'uniform'");
            t.loss = l == "weighted" ? neural::LossMode::weighted : neural::LossMode::uniform;
        }
        t.train_fraction = n.value("train_fraction", t.train_fraction);
        t.reset_optimizer_between_phases = n.value("reset_optimizer_between_phases", t.reset_optimizer_between_phases);
        c.net.train_patches = n.value("train_patches", c.net.train_patches);
        c.net.train_noise_sigma = n.value("train_noise_sigma", c.net.train_noise_sigma);
        c.net.inference_batch = n.value("inference_batch", c.net.inference_batch);
    }
    if (j.contains("scene"))
        c.scene.spec = j.at("scene").get<scene::SceneSpec>();
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        detail::check_keys(p, "paths",
            {"light_field", "training_light_fields", "measurement", "operator", "dictionary", "dictionary_csv",
                "checkpoint", "loss_csv", "reconstruction", "reconstruction_channels", "report", "reports",
                "report_csv", "mosaic_png", "error_png"});
        auto& o = c.paths;
        o.light_field = detail::path_of(p, "light_field");
        o.training_light_fields = detail::path_list(p, "training_light_fields");
        o.measurement = detail::path_of(p, "measurement");
        o.operator_file = detail::path_of(p, "operator");
        o.dictionary = detail::path_of(p, "dictionary");
        o.dictionary_csv = detail::path_of(p, "dictionary_csv");
        o.checkpoint = detail::path_of(p, "checkpoint");
        o.loss_csv = detail::path_of(p, "loss_csv");
        o.reconstruction = detail::path_of(p, "reconstruction");
        o.reconstruction_channels = detail::path_list(p, "reconstruction_channels");
        o.report = detail::path_of(p, "report");
        o.reports = detail::path_list(p, "reports");
        o.report_csv = detail::path_of(p, "report_csv");
        o.mosaic_png = detail::path_of(p, "mosaic_png");
        o.error_png = detail::path_of(p, "error_png");
    }
    return c;
}

inline void ExperimentConfig::validate() const
{
    camera.validate();
    if (stride == 0 || stride > camera.patch.x || stride > camera.patch.y)
        throw Error("config: stride must lie in [1, patch size]");
    if (!(noise_sigma >= 0.0 && noise_sigma <= 1.0))
        throw Error("config: noise sigma must lie in [0, 1]");
    if (workers == 0)
        throw Error("config: workers must be >= 1");
    if (!(pinv.ridge >= 0.0))
        throw Error("config: pinv.ridge must be >= 0");
    if (pinv.window == 0)
        throw Error("config: pinv.window must be >= 1");
    if (pinv.window > 1 && camera.model == optics::CameraModel::random)
        throw Error("config: pinv.window > 1 needs a pixel-local camera model");
    dict.solver.validate();
    if (dict.sparsity == 0 || dict.sparsity > dict.atom_count(camera.patch))
        throw Error("config: dict.sparsity must lie in [1, atoms]");
    if (dict.iterations == 0)
        throw Error("config: dict.iterations must be >= 1");
    net.model_spec(camera).validate();
    net.train.validate();
    if (!(net.train_noise_sigma >= 0.0 && net.train_noise_sigma <= 1.0))
        throw Error("config: net.train_noise_sigma must lie in [0, 1]");
    if (net.inference_batch == 0)
        throw Error("config: net.inference_batch must be >= 1");
    scene.spec.validate();
    if (!paths.reconstruction_channels.empty() && paths.reconstruction_channels.size() != 3)
        throw Error("config: reconstruction_channels needs exactly 3 entries (R, G, B)");

    // Every path this config can write or read as a distinct artifact must be unique.
    std::set<fs::path> seen;
    auto add = [&](const fs::path& p, const std::string& key) {
        if (p.empty())
            return;
        const auto norm = fs::weakly_canonical(fs::absolute(resolve(p)));
        if (!seen.insert(norm).second)
            throw Error("config: path '" + p.generic_string() + "' (" + key + ") is referenced more than once");
    };
    add(paths.light_field, "light_field");
    for (const auto& p : paths.training_light_fields)
        add(p, "training_light_fields");
    add(paths.measurement, "measurement");
    add(paths.operator_file, "operator");
    add(paths.dictionary, "dictionary");
    add(paths.dictionary_csv, "dictionary_csv");
    add(paths.checkpoint, "checkpoint");
    add(paths.loss_csv, "loss_csv");
    add(paths.reconstruction, "reconstruction");
    add(reconstruction_sidecar(), "reconstruction sidecar");
    for (const auto& p : paths.reconstruction_channels)
        add(p, "reconstruction_channels");
    add(paths.report, "report");
    add(paths.report_csv, "report_csv");
    add(paths.mosaic_png, "mosaic_png");
    add(paths.error_png, "error_png");
}

inline ExperimentConfig load(const fs::path& file)
{
    std::ifstream in(file);
    if (!in)
        throw Error("config: cannot open " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("config: " + file.string() + ": " + e.what());
    }
    ExperimentConfig c;
    try {
        c = from_json(j);
    } catch (const json::exception& e) {
        throw Error("config: " + file.string() + ": " + e.what());
    }
    c.base_dir = file.parent_path();
    return c;
}

} // namespace lfr::config
