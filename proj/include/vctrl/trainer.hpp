#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "vctrl/base_denoiser.hpp"
#include "vctrl/diffusion.hpp"
#include "vctrl/vctrl_adapter.hpp"

namespace vctrl {

struct TrainConfig {
    double lr = 1e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 1.0;
    int steps = 0;
    int batch = 8;
    int frames_per_clip = 49;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

// Desk-scale preset for the toy model: 8-frame clips, batch 8, lr 1e-3.
TrainConfig desk_train_config();

// One denoising example in model space ([-1,1] latents).
struct TrainingExample {
    Tensor4 z0;
    int prompt = 0;
    std::optional<Tensor4> control;  // z_m
};

struct LossPoint {
    int step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;     // before clipping
    double clipped_norm = 0.0;  // after clipping
};

template <class P>
struct TrainResult {
    P params;
    std::vector<LossPoint> curve;
};

using StepCallback = std::function<void(const LossPoint&)>;

class Adam {
public:
    explicit Adam(const TrainConfig& config) : config_(config) {}
    void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads);
    int iterations() const { return t_; }

private:
    TrainConfig config_;
    int t_ = 0;
    std::vector<Mat> m_, v_;
};

double global_norm(const std::vector<Mat*>& grads);
// Rescales grads in place so their global norm is at most max_norm; returns
// the norm before clipping.
double clip_gradients(const std::vector<Mat*>& grads, double max_norm);

TrainResult<BaseParams> pretrain_base(const std::vector<TrainingExample>& data, const BaseConfig& model,
                                      const NoiseSchedule& schedule, const TrainConfig& config,
                                      const StepCallback& on_step = {});

// Only the adapter is optimized; `base` is read-only throughout.
TrainResult<VCtrlParams> train_vctrl(const std::vector<TrainingExample>& data, const BaseParams& base,
                                     const NetworkSpec& spec, const VCtrlConfig& adapter_config,
                                     const NoiseSchedule& schedule, const TrainConfig& config,
                                     const StepCallback& on_step = {});

// Mean eps-MSE over `data` with (t, eps) drawn once per example from `seed`.
// Uses the controlled forward when adapter and spec are given.
double validation_loss(const std::vector<TrainingExample>& data, const BaseParams& base, const VCtrlParams* adapter,
                       const NetworkSpec* spec, const NoiseSchedule& schedule, std::uint64_t seed);

// Offset in [0, max_offset], normal around max_offset/2 with sd 0.25 * max_offset,
// rejected and redrawn until in range.
int truncated_normal_offset(int max_offset, std::mt19937_64& rng);
std::pair<int, int> crop_offsets(std::size_t height, std::size_t width, std::size_t target_h, std::size_t target_w,
                                 std::mt19937_64& rng);
VideoTensor crop_video(const VideoTensor& video, int top, int left, std::size_t target_h, std::size_t target_w);
VideoTensor truncated_normal_crop(const VideoTensor& video, std::size_t target_h, std::size_t target_w,
                                  std::mt19937_64& rng);

// Denoiser callbacks for the sampler.
DenoiseFn base_denoiser_fn(const BaseParams& base);
DenoiseFn controlled_denoiser_fn(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec);

}  // namespace vctrl
