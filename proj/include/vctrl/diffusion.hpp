#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "vctrl/tensor.hpp"

namespace vctrl {

// Linear-beta DDPM schedule. Timesteps are 1-based; alpha_bar(0) == 1.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;       // betas[t-1] = beta_t
    std::vector<double> alphas_bar;  // alphas_bar[t-1] = prod_{s<=t} (1 - beta_s)

    double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alphas_bar.at(static_cast<std::size_t>(t - 1)); }
};

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps
Tensor4 add_noise(const Tensor4& z, int t, const Tensor4& eps, const NoiseSchedule& schedule);
LatentTensor add_noise(const LatentTensor& z, int t, const LatentTensor& eps, const NoiseSchedule& schedule);

// Mean squared error over all elements.
double eps_loss(const Tensor4& eps_true, const Tensor4& eps_pred);
double eps_loss(const LatentTensor& eps_true, const LatentTensor& eps_pred);

struct Conditioning {
    int prompt = 0;
    std::optional<Tensor4> control;  // z_m, f x h x w x (ch+1)
};

using DenoiseFn = std::function<Tensor4(const Tensor4& z_t, int t, const Conditioning& cond)>;

// Ancestral DDPM sampling from z_T ~ N(0, I). Throws NumericError carrying t
// when the model output is not finite.
Tensor4 sample(const DenoiseFn& model, const NoiseSchedule& schedule, const std::array<std::size_t, 4>& shape,
               const Conditioning& cond, std::uint64_t seed);

Tensor4 standard_normal(const std::array<std::size_t, 4>& shape, std::mt19937_64& rng);

// Codec latents live in [0,1]; the denoiser is trained on [-1,1].
Tensor4 to_model_space(const Tensor4& latent);
Tensor4 from_model_space(const Tensor4& z);

}  // namespace vctrl
