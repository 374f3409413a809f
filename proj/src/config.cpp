#include "vctrl/config.hpp"

#include <fstream>
#include <set>

#include "vctrl/error.hpp"

namespace vctrl {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigurationError(where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigurationError("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const std::string& where, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigurationError(where + "." + key + " has the wrong type");
    }
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigurationError(what);
}

TrainConfig parse_train(const json& j, const std::string& where, TrainConfig c) {
    check_keys(j, where, {"lr", "adam_beta1", "adam_beta2", "adam_eps", "grad_clip_norm", "steps", "batch",
                          "frames_per_clip", "seed"});
    read(j, where, "lr", c.lr);
    read(j, where, "adam_beta1", c.adam_beta1);
    read(j, where, "adam_beta2", c.adam_beta2);
    read(j, where, "adam_eps", c.adam_eps);
    read(j, where, "grad_clip_norm", c.grad_clip_norm);
    read(j, where, "steps", c.steps);
    read(j, where, "batch", c.batch);
    read(j, where, "frames_per_clip", c.frames_per_clip);
    read(j, where, "seed", c.seed);
    try {
        validate(c);
    } catch (const Error& e) {
        throw ConfigurationError(where + ": " + e.what());
    }
    return c;
}

ordered_json train_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"grad_clip_norm", c.grad_clip_norm},
            {"steps", c.steps},
            {"batch", c.batch},
            {"frames_per_clip", c.frames_per_clip},
            {"seed", c.seed}};
}

}  // namespace

RunConfig parse_config(const json& j) {
    RunConfig c;
    c.train = desk_train_config();
    check_keys(j, "config", {"model", "diffusion", "train", "control_train", "data", "paths", "sample"});

    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m, "model", {"M", "d_b", "heads", "d_c", "layout", "ratio", "patch"});
        read(m, "model", "M", c.model.M);
        read(m, "model", "d_b", c.model.d_b);
        read(m, "model", "heads", c.model.heads);
        read(m, "model", "d_c", c.model.d_c);
        std::string layout = to_string(c.model.layout), ratio = to_string(c.model.ratio);
        read(m, "model", "layout", layout);
        read(m, "model", "ratio", ratio);
        try {
            c.model.layout = layout_from_string(layout);
            c.model.ratio = ratio_from_string(ratio);
        } catch (const Error& e) {
            throw ConfigurationError(std::string("model: ") + e.what());
        }
        if (m.contains("patch")) {
            std::array<int, 2> p{};
            read(m, "model", "patch", p);
            c.model.patch = {p[0], p[1]};
        }
    }
    require(c.model.M >= 1 && c.model.M <= 64, "model.M must be in [1, 64]");
    require(c.model.heads >= 1 && c.model.d_b >= 1 && c.model.d_b % c.model.heads == 0,
            "model.d_b must be a positive multiple of model.heads");
    require(c.model.d_c >= 1 && c.model.d_c % c.model.heads == 0, "model.d_c must be a positive multiple of model.heads");
    require(c.model.patch.temporal >= 1 && c.model.patch.spatial >= 1, "model.patch entries must be positive");

    if (j.contains("diffusion")) {
        const json& d = j["diffusion"];
        check_keys(d, "diffusion", {"T", "beta_min", "beta_max"});
        read(d, "diffusion", "T", c.diffusion.T);
        read(d, "diffusion", "beta_min", c.diffusion.beta_min);
        read(d, "diffusion", "beta_max", c.diffusion.beta_max);
    }
    try {
        make_schedule(c.diffusion.T, c.diffusion.beta_min, c.diffusion.beta_max);
    } catch (const Error& e) {
        throw ConfigurationError(std::string("diffusion: ") + e.what());
    }

    if (j.contains("train")) c.train = parse_train(j["train"], "train", c.train);
    c.control_train = j.contains("control_train") ? parse_train(j["control_train"], "control_train", c.train) : c.train;

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, "data", {"n_clips", "F", "H", "W", "seed", "control", "hamming_threshold", "border_std", "canny",
                               "raw_dir"});
        read(d, "data", "n_clips", c.data.n_clips);
        read(d, "data", "F", c.data.F);
        read(d, "data", "H", c.data.H);
        read(d, "data", "W", c.data.W);
        read(d, "data", "seed", c.data.seed);
        read(d, "data", "hamming_threshold", c.data.hamming_threshold);
        read(d, "data", "border_std", c.data.border_std);
        read(d, "data", "raw_dir", c.data.raw_dir);
        std::string kind = to_string(c.data.control);
        read(d, "data", "control", kind);
        try {
            c.data.control = control_kind_from_string(kind);
        } catch (const Error& e) {
            throw ConfigurationError(std::string("data.control: ") + e.what());
        }
        if (d.contains("canny")) {
            check_keys(d["canny"], "data.canny", {"low", "high", "sigma"});
            read(d["canny"], "data.canny", "low", c.data.canny.low);
            read(d["canny"], "data.canny", "high", c.data.canny.high);
            read(d["canny"], "data.canny", "sigma", c.data.canny.sigma);
        }
    }
    require(c.data.n_clips >= 1, "data.n_clips must be positive");
    require(c.data.F >= 1 && c.data.H >= 3 && c.data.W >= 3, "data.F must be >= 1 and data.H, data.W >= 3");
    require(c.data.F % c.model.patch.temporal == 0 && c.data.H % c.model.patch.spatial == 0 &&
                c.data.W % c.model.patch.spatial == 0,
            "data dimensions must be divisible by the patch size");
    require(c.data.hamming_threshold >= 0 && c.data.hamming_threshold <= 64, "data.hamming_threshold must be in [0, 64]");
    require(c.data.border_std >= 0, "data.border_std must be non-negative");
    require(c.data.canny.low >= 0 && c.data.canny.high >= c.data.canny.low && c.data.canny.sigma > 0,
            "data.canny needs 0 <= low <= high and sigma > 0");

    if (j.contains("paths")) {
        const json& p = j["paths"];
        check_keys(p, "paths", {"dataset_dir", "ckpt_dir", "report_dir", "samples_dir"});
        std::string s;
        auto path = [&](const char* key, std::filesystem::path& out) {
            if (!p.contains(key)) return;
            read(p, "paths", key, s);
            out = s;
        };
        path("dataset_dir", c.paths.dataset_dir);
        path("ckpt_dir", c.paths.ckpt_dir);
        path("report_dir", c.paths.report_dir);
        path("samples_dir", c.paths.samples_dir);
    }

    if (j.contains("sample")) {
        check_keys(j["sample"], "sample", {"count"});
        read(j["sample"], "sample", "count", c.sample.count);
    }
    require(c.sample.count >= 1, "sample.count must be positive");
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigurationError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

ordered_json config_to_json(const RunConfig& c) {
    ordered_json j;
    j["model"] = {{"M", c.model.M},
                  {"d_b", c.model.d_b},
                  {"heads", c.model.heads},
                  {"d_c", c.model.d_c},
                  {"layout", to_string(c.model.layout)},
                  {"ratio", to_string(c.model.ratio)},
                  {"patch", {c.model.patch.temporal, c.model.patch.spatial}}};
    j["diffusion"] = {{"T", c.diffusion.T}, {"beta_min", c.diffusion.beta_min}, {"beta_max", c.diffusion.beta_max}};
    j["train"] = train_json(c.train);
    j["control_train"] = train_json(c.control_train);
    j["data"] = {{"n_clips", c.data.n_clips},
                 {"F", c.data.F},
                 {"H", c.data.H},
                 {"W", c.data.W},
                 {"seed", c.data.seed},
                 {"control", to_string(c.data.control)},
                 {"hamming_threshold", c.data.hamming_threshold},
                 {"border_std", c.data.border_std},
                 {"canny", {{"low", c.data.canny.low}, {"high", c.data.canny.high}, {"sigma", c.data.canny.sigma}}},
                 {"raw_dir", c.data.raw_dir}};
    j["paths"] = {{"dataset_dir", c.paths.dataset_dir.string()},
                  {"ckpt_dir", c.paths.ckpt_dir.string()},
                  {"report_dir", c.paths.report_dir.string()},
                  {"samples_dir", c.paths.samples_dir.string()}};
    j["sample"] = {{"count", c.sample.count}};
    return j;
}

BaseConfig RunConfig::base_config() const {
    BaseConfig b;
    b.latent_channels = model.patch.channels();
    b.grid = {std::size_t(data.F / model.patch.temporal), std::size_t(data.H / model.patch.spatial),
              std::size_t(data.W / model.patch.spatial)};
    b.width = model.d_b;
    b.heads = model.heads;
    b.blocks = model.M;
    b.classes = kCaptionClasses;
    return b;
}

VCtrlConfig RunConfig::adapter_config() const {
    VCtrlConfig a;
    a.control_channels = model.patch.channels() + 1;
    a.width = model.d_c;
    a.heads = model.heads;
    return a;
}

NetworkSpec RunConfig::network_spec() const { return make_network_spec(model.M, model.layout, model.ratio); }

NoiseSchedule RunConfig::schedule() const { return make_schedule(diffusion.T, diffusion.beta_min, diffusion.beta_max); }

std::filesystem::path RunConfig::samples_dir() const {
    return paths.samples_dir.empty() ? paths.report_dir / "samples" : paths.samples_dir;
}

void override_seed(RunConfig& c, std::uint64_t seed) {
    c.data.seed = seed;
    c.train.seed = seed;
    c.control_train.seed = seed;
}

void resolve_paths(RunConfig& c, const std::filesystem::path& root) {
    for (auto* p : {&c.paths.dataset_dir, &c.paths.ckpt_dir, &c.paths.report_dir, &c.paths.samples_dir})
        if (!p->empty() && p->is_relative()) *p = root / *p;
    if (!c.data.raw_dir.empty() && std::filesystem::path(c.data.raw_dir).is_relative())
        c.data.raw_dir = (root / c.data.raw_dir).string();
}

}  // namespace vctrl
