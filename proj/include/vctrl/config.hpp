#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "vctrl/base_denoiser.hpp"
#include "vctrl/control_encoder.hpp"
#include "vctrl/control_extractors.hpp"
#include "vctrl/diffusion.hpp"
#include "vctrl/trainer.hpp"
#include "vctrl/vctrl_adapter.hpp"

namespace vctrl {

struct ModelConfig {
    int M = 12;
    int d_b = 96;
    int heads = 4;
    int d_c = 48;
    Layout layout = Layout::space;
    SizeRatio ratio = SizeRatio::medium;
    PatchSpec patch{2, 4};
};

struct DiffusionConfig {
    int T = 50;
    double beta_min = 2e-3;
    double beta_max = 0.4;
};

struct DataConfig {
    int n_clips = 64;
    int F = 8;
    int H = 16;
    int W = 16;
    std::uint64_t seed = 0;
    ControlKind control = ControlKind::canny;
    int hamming_threshold = 16;
    double border_std = 0.05;
    CannyThresholds canny;
    std::string raw_dir;  // optional directory of raw *.vclt videos to ingest instead of synthesizing
};

struct PathsConfig {
    std::filesystem::path dataset_dir = "dataset";
    std::filesystem::path ckpt_dir = "ckpt";
    std::filesystem::path report_dir = "reports";
    std::filesystem::path samples_dir;  // empty: <report_dir>/samples
};

struct SampleConfig {
    int count = 16;  // clips sampled / evaluated, taken from the front of the dataset
};

struct RunConfig {
    ModelConfig model;
    DiffusionConfig diffusion;
    TrainConfig train;          // base pretraining
    TrainConfig control_train;  // adapter training; defaults to `train` when absent
    DataConfig data;
    PathsConfig paths;
    SampleConfig sample;

    BaseConfig base_config() const;
    VCtrlConfig adapter_config() const;
    NetworkSpec network_spec() const;
    NoiseSchedule schedule() const;
    std::filesystem::path samples_dir() const;
};

// Strict parse: unknown keys, wrong types and out-of-range values throw ConfigurationError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const RunConfig& config);

// Replaces every seed (data, train, control_train).
void override_seed(RunConfig& config, std::uint64_t seed);
// Resolves relative paths against `root`.
void resolve_paths(RunConfig& config, const std::filesystem::path& root);

}  // namespace vctrl
