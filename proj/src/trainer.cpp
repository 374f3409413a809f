#include "vctrl/trainer.hpp"

#include <cmath>
#include <string>

#include "vctrl/error.hpp"

namespace vctrl {

namespace {

struct Batch {
    DenoiserInput input;
    Mat eps;
};

Batch draw_batch(const std::vector<TrainingExample>& data, const NoiseSchedule& schedule, int batch_size,
                 bool with_control, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<int> step(1, schedule.steps);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(data.front().z0.dims[0] * data.front().z0.dims[1] * data.front().z0.dims[2]);
    const auto ch = static_cast<Eigen::Index>(data.front().z0.dims[3]);
    Batch b;
    b.input.z.resize(n * batch_size, ch);
    b.eps.resize(n * batch_size, ch);
    if (with_control) b.input.control.resize(n * batch_size, static_cast<Eigen::Index>(data.front().control->dims[3]));
    for (int s = 0; s < batch_size; ++s) {
        const auto& ex = data[pick(rng)];
        const int t = step(rng);
        const double a = std::sqrt(schedule.alpha_bar(t));
        const double c = std::sqrt(1.0 - schedule.alpha_bar(t));
        const Mat z0 = tokenize(ex.z0);
        auto eps = b.eps.middleRows(s * n, n);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
        b.input.z.middleRows(s * n, n) = a * z0 + c * eps;
        if (with_control) b.input.control.middleRows(s * n, n) = tokenize(*ex.control);
        b.input.t.push_back(t);
        b.input.prompt.push_back(ex.prompt);
    }
    return b;
}

template <class P, class Visit>
std::pair<std::vector<Mat*>, std::vector<Mat*>> tensor_lists(P& params, P& grads, Visit visit) {
    std::vector<Mat*> p, g;
    visit(params, [&](const std::string&, Mat& m) { p.push_back(&m); });
    visit(grads, [&](const std::string&, Mat& m) { g.push_back(&m); });
    return {p, g};
}

void check_dataset(const std::vector<TrainingExample>& data, bool need_control) {
    if (data.empty()) throw ParameterError("training set is empty");
    for (const auto& ex : data) {
        if (!ex.z0.same_shape(data.front().z0)) throw DimensionError("training examples differ in latent shape");
        if (need_control && !ex.control) throw ConfigurationError("adapter training needs a control bundle per example");
    }
}

LossPoint finish_step(int step, double loss, const std::vector<Mat*>& grads, const TrainConfig& config) {
    if (!std::isfinite(loss)) throw NumericError("loss is not finite at step " + std::to_string(step), step);
    LossPoint pt;
    pt.step = step;
    pt.loss = loss;
    pt.grad_norm = clip_gradients(grads, config.grad_clip_norm);
    if (!std::isfinite(pt.grad_norm)) throw NumericError("gradient is not finite at step " + std::to_string(step), step);
    pt.clipped_norm = global_norm(grads);
    return pt;
}

}  // namespace

void validate(const TrainConfig& c) {
    if (!(c.lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) || !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) {
        throw ParameterError("Adam betas must lie in [0, 1)");
    }
    if (!(c.grad_clip_norm > 0.0)) throw ParameterError("gradient clip norm must be positive");
    if (c.steps < 0 || c.batch < 1) throw ParameterError("steps must be >= 0 and batch >= 1");
}

TrainConfig desk_train_config() {
    TrainConfig c;
    c.lr = 1e-3;
    c.frames_per_clip = 8;
    c.batch = 8;
    return c;
}

void Adam::step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
    if (m_.empty()) {
        for (const Mat* p : params) {
            m_.push_back(Mat::Zero(p->rows(), p->cols()));
            v_.push_back(Mat::Zero(p->rows(), p->cols()));
        }
    }
    ++t_;
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0 - b1) * *grads[i];
        v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i]->cwiseAbs2();
        params[i]->array() -= config_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.adam_eps);
    }
}

double global_norm(const std::vector<Mat*>& grads) {
    double sq = 0.0;
    for (const Mat* g : grads) sq += g->squaredNorm();
    return std::sqrt(sq);
}

double clip_gradients(const std::vector<Mat*>& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Mat* g : grads) *g *= scale;
    }
    return norm;
}

TrainResult<BaseParams> pretrain_base(const std::vector<TrainingExample>& data, const BaseConfig& model,
                                      const NoiseSchedule& schedule, const TrainConfig& config,
                                      const StepCallback& on_step) {
    validate(config);
    check_dataset(data, false);
    TrainResult<BaseParams> result{init_base(model, config.seed), {}};
    BaseParams grads = zeros_like(result.params);
    auto [params, grad_list] = tensor_lists(result.params, grads, [](auto& p, auto&& f) { visit_base(p, f); });
    const std::vector<const Mat*> grad_view(grad_list.begin(), grad_list.end());
    Adam adam(config);
    std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    BaseTrace trace;
    for (int step = 1; step <= config.steps; ++step) {
        const Batch b = draw_batch(data, schedule, config.batch, false, rng);
        const Mat out = base_forward_batch(result.params, b.input, &trace);
        const Mat diff = out - b.eps;
        const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
        for (Mat* g : grad_list) g->setZero();
        base_backward_batch(result.params, trace, 2.0 * diff / static_cast<double>(diff.size()), grads);
        const LossPoint pt = finish_step(step, loss, grad_list, config);
        adam.step(params, grad_view);
        result.curve.push_back(pt);
        if (on_step) on_step(pt);
    }
    return result;
}

TrainResult<VCtrlParams> train_vctrl(const std::vector<TrainingExample>& data, const BaseParams& base,
                                     const NetworkSpec& spec, const VCtrlConfig& adapter_config,
                                     const NoiseSchedule& schedule, const TrainConfig& config,
                                     const StepCallback& on_step) {
    validate(config);
    validate_spec(spec);
    if (spec.base_blocks != static_cast<int>(base.blocks.size())) {
        throw ConfigurationError("network spec M=" + std::to_string(spec.base_blocks) + " does not match the base (" +
                                 std::to_string(base.blocks.size()) + " blocks)");
    }
    check_dataset(data, true);
    TrainResult<VCtrlParams> result{init_adapter(adapter_config, base.config.width, spec.control_blocks, config.seed), {}};
    VCtrlParams grads = zeros_like(result.params);
    auto [params, grad_list] = tensor_lists(result.params, grads, [](auto& p, auto&& f) { visit_adapter(p, f); });
    const std::vector<const Mat*> grad_view(grad_list.begin(), grad_list.end());
    Adam adam(config);
    std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    ControlTrace trace;
    for (int step = 1; step <= config.steps; ++step) {
        const Batch b = draw_batch(data, schedule, config.batch, true, rng);
        const Mat out = controlled_forward_batch(base, result.params, spec, b.input, &trace);
        const Mat diff = out - b.eps;
        const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
        for (Mat* g : grad_list) g->setZero();
        controlled_backward_batch(base, result.params, spec, trace, 2.0 * diff / static_cast<double>(diff.size()), nullptr,
                                  &grads);
        const LossPoint pt = finish_step(step, loss, grad_list, config);
        adam.step(params, grad_view);
        result.curve.push_back(pt);
        if (on_step) on_step(pt);
    }
    return result;
}

double validation_loss(const std::vector<TrainingExample>& data, const BaseParams& base, const VCtrlParams* adapter,
                       const NetworkSpec* spec, const NoiseSchedule& schedule, std::uint64_t seed) {
    check_dataset(data, adapter != nullptr);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> step(1, schedule.steps);
    double total = 0.0;
    for (const auto& ex : data) {
        const int t = step(rng);
        const Tensor4 eps = standard_normal(ex.z0.dims, rng);
        DenoiserInput in;
        in.z = tokenize(add_noise(ex.z0, t, eps, schedule));
        in.t = {t};
        in.prompt = {ex.prompt};
        Mat out;
        if (adapter) {
            in.control = tokenize(*ex.control);
            out = controlled_forward_batch(base, *adapter, *spec, in, nullptr);
        } else {
            out = base_forward_batch(base, in, nullptr);
        }
        total += (out - tokenize(eps)).squaredNorm() / static_cast<double>(out.size());
    }
    return total / static_cast<double>(data.size());
}

int truncated_normal_offset(int max_offset, std::mt19937_64& rng) {
    if (max_offset < 0) throw ParameterError("crop target is larger than the source");
    if (max_offset == 0) return 0;
    const double center = 0.5 * max_offset;
    std::normal_distribution<double> normal(center, 0.25 * max_offset);
    for (;;) {
        const double draw = normal(rng);
        if (draw >= 0.0 && draw <= max_offset) return static_cast<int>(std::lround(draw));
    }
}

std::pair<int, int> crop_offsets(std::size_t height, std::size_t width, std::size_t target_h, std::size_t target_w,
                                 std::mt19937_64& rng) {
    if (target_h > height || target_w > width) throw ParameterError("crop target is larger than the source frame");
    const int top = truncated_normal_offset(static_cast<int>(height - target_h), rng);
    const int left = truncated_normal_offset(static_cast<int>(width - target_w), rng);
    return {top, left};
}

VideoTensor crop_video(const VideoTensor& video, int top, int left, std::size_t target_h, std::size_t target_w) {
    const auto& d = video.data.dims;
    if (top < 0 || left < 0 || top + target_h > d[1] || left + target_w > d[2]) throw ParameterError("crop out of bounds");
    VideoTensor out;
    out.fps = video.fps;
    out.data = Tensor4(d[0], target_h, target_w, d[3]);
    for (std::size_t t = 0; t < d[0]; ++t)
        for (std::size_t y = 0; y < target_h; ++y)
            for (std::size_t x = 0; x < target_w; ++x)
                for (std::size_t k = 0; k < d[3]; ++k)
                    out.data.at(t, y, x, k) = video.data.at(t, y + static_cast<std::size_t>(top), x + static_cast<std::size_t>(left), k);
    return out;
}

VideoTensor truncated_normal_crop(const VideoTensor& video, std::size_t target_h, std::size_t target_w,
                                  std::mt19937_64& rng) {
    const auto [top, left] = crop_offsets(video.height(), video.width(), target_h, target_w, rng);
    return crop_video(video, top, left, target_h, target_w);
}

DenoiseFn base_denoiser_fn(const BaseParams& base) {
    return [&base](const Tensor4& z_t, int t, const Conditioning& cond) {
        DenoiserInput in;
        in.z = tokenize(z_t);
        in.t = {t};
        in.prompt = {cond.prompt};
        return untokenize(base_forward_batch(base, in, nullptr), {z_t.dims[0], z_t.dims[1], z_t.dims[2]});
    };
}

DenoiseFn controlled_denoiser_fn(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec) {
    return [&base, &adapter, &spec](const Tensor4& z_t, int t, const Conditioning& cond) {
        if (!cond.control) throw ConditioningError("controlled sampling needs a control bundle");
        DenoiserInput in;
        in.z = tokenize(z_t);
        in.t = {t};
        in.prompt = {cond.prompt};
        in.control = tokenize(*cond.control);
        return untokenize(controlled_forward_batch(base, adapter, spec, in, nullptr), {z_t.dims[0], z_t.dims[1], z_t.dims[2]});
    };
}

}  // namespace vctrl
