#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vctrl/config.hpp"
#include "vctrl/control_encoder.hpp"
#include "vctrl/control_extractors.hpp"
#include "vctrl/trainer.hpp"

namespace vctrl {

// Worker count: VCTRL_THREADS if set and positive, else hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Results must be
// written to per-index slots; the first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

struct NamedClip {
    std::string name;
    ClipRecord clip;
};

// Reads <dir>/manifest.json and every clip it lists.
std::vector<NamedClip> load_dataset(const std::filesystem::path& dir);

// Control video of the configured kind; pose draws 3x3 dots at visible keypoints.
ControlVideo control_video_for(const ClipRecord& clip, ControlKind kind);
ControlBundle control_bundle_for(const ClipRecord& clip, ControlKind kind, PatchSpec patch);

TrainingExample make_example(const ClipRecord& clip, const RunConfig& config, bool with_control);

// Sampling seed for the i-th clip of a run.
std::uint64_t sample_seed(std::uint64_t run_seed, std::size_t index);

// Controlled samples for clips [0, count), decoded to videos.
std::vector<VideoTensor> sample_videos(const std::vector<NamedClip>& clips, std::size_t count, const BaseParams& base,
                                       const VCtrlParams* adapter, const NetworkSpec* spec, const RunConfig& config);

}  // namespace vctrl
