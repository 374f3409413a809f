#include "vctrl/diffusion.hpp"

#include <cmath>
#include <string>

#include "vctrl/error.hpp"

namespace vctrl {

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 1) throw ParameterError("schedule needs T >= 1, got " + std::to_string(steps));
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw ParameterError("schedule needs 0 < beta_min <= beta_max < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alphas_bar.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        const double beta = beta_min + frac * (beta_max - beta_min);
        prod *= 1.0 - beta;
        s.betas[static_cast<std::size_t>(t - 1)] = beta;
        s.alphas_bar[static_cast<std::size_t>(t - 1)] = prod;
    }
    return s;
}

Tensor4 add_noise(const Tensor4& z, int t, const Tensor4& eps, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps) {
        throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps) + "]");
    }
    if (!z.same_shape(eps)) throw DimensionError("noise shape differs from latent shape");
    const double a = std::sqrt(schedule.alpha_bar(t));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
    Tensor4 out = z;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z.data[i] + b * eps.data[i];
    return out;
}

LatentTensor add_noise(const LatentTensor& z, int t, const LatentTensor& eps, const NoiseSchedule& schedule) {
    return {add_noise(z.data, t, eps.data, schedule), z.patch};
}

double eps_loss(const Tensor4& eps_true, const Tensor4& eps_pred) {
    if (!eps_true.same_shape(eps_pred)) throw DimensionError("eps_loss operands differ in shape");
    if (eps_true.data.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < eps_true.data.size(); ++i) {
        const double d = eps_true.data[i] - eps_pred.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps_true.data.size());
}

double eps_loss(const LatentTensor& eps_true, const LatentTensor& eps_pred) {
    return eps_loss(eps_true.data, eps_pred.data);
}

Tensor4 standard_normal(const std::array<std::size_t, 4>& shape, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor4 out(shape[0], shape[1], shape[2], shape[3]);
    for (auto& v : out.data) v = normal(rng);
    return out;
}

Tensor4 sample(const DenoiseFn& model, const NoiseSchedule& schedule, const std::array<std::size_t, 4>& shape,
               const Conditioning& cond, std::uint64_t seed) {
    if (schedule.steps < 1 || schedule.betas.size() != static_cast<std::size_t>(schedule.steps)) {
        throw ParameterError("invalid noise schedule");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor4 z = standard_normal(shape, rng);
    for (int t = schedule.steps; t >= 1; --t) {
        const Tensor4 eps = model(z, t, cond);
        if (!eps.same_shape(z)) throw DimensionError("model output shape differs from latent shape");
        const double beta = schedule.beta(t);
        const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        const double sigma = std::sqrt(beta);
        for (std::size_t i = 0; i < z.data.size(); ++i) {
            if (!std::isfinite(eps.data[i])) throw NumericError("non-finite model output at t=" + std::to_string(t), t);
            z.data[i] = (z.data[i] - coef * eps.data[i]) * inv_sqrt_alpha;
            if (t > 1) z.data[i] += sigma * normal(rng);
        }
    }
    return z;
}

Tensor4 to_model_space(const Tensor4& latent) {
    Tensor4 out = latent;
    for (auto& v : out.data) v = 2.0 * v - 1.0;
    return out;
}

Tensor4 from_model_space(const Tensor4& z) {
    Tensor4 out = z;
    for (auto& v : out.data) v = 0.5 * (v + 1.0);
    return out;
}

}  // namespace vctrl
