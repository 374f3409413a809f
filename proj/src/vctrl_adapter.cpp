#include "vctrl/vctrl_adapter.hpp"

#include <cmath>
#include <map>

#include "vctrl/error.hpp"

namespace vctrl {

namespace {

constexpr double kRmsEps = 1e-12;

void check_blocks(int base_blocks, int control_blocks) {
    if (control_blocks < 1 || control_blocks > base_blocks) {
        throw ParameterError("control block count N=" + std::to_string(control_blocks) + " must satisfy 1 <= N <= M=" +
                             std::to_string(base_blocks));
    }
}

void validate_pair(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec, const DenoiserInput& in) {
    validate_spec(spec);
    if (spec.base_blocks != static_cast<int>(base.blocks.size())) {
        throw ConfigurationError("network spec M=" + std::to_string(spec.base_blocks) + " but the base has " +
                                 std::to_string(base.blocks.size()) + " blocks");
    }
    if (static_cast<int>(adapter.blocks.size()) != spec.control_blocks ||
        static_cast<int>(adapter.fuse_out.size()) != spec.control_blocks) {
        throw ConfigurationError("adapter block count does not match network spec N=" + std::to_string(spec.control_blocks));
    }
    if (adapter.entry.w.rows() != base.config.width) throw ConfigurationError("adapter entry width differs from base width");
    if (in.control.rows() != in.z.rows()) throw DimensionError("control bundle grid does not match the latent grid");
    if (in.control.cols() != adapter.config.control_channels) {
        throw DimensionError("control bundle has " + std::to_string(in.control.cols()) + " channels, adapter expects " +
                             std::to_string(adapter.config.control_channels));
    }
}

}  // namespace

std::string to_string(Layout layout) {
    switch (layout) {
        case Layout::even: return "even";
        case Layout::end: return "end";
        case Layout::space: return "space";
    }
    return "unknown";
}

std::string to_string(SizeRatio ratio) {
    switch (ratio) {
        case SizeRatio::small: return "small";
        case SizeRatio::medium: return "medium";
        case SizeRatio::large: return "large";
    }
    return "unknown";
}

Layout layout_from_string(const std::string& name) {
    if (name == "even") return Layout::even;
    if (name == "end") return Layout::end;
    if (name == "space") return Layout::space;
    throw ParameterError("unknown layout '" + name + "'");
}

SizeRatio ratio_from_string(const std::string& name) {
    if (name == "small") return SizeRatio::small;
    if (name == "medium") return SizeRatio::medium;
    if (name == "large") return SizeRatio::large;
    throw ParameterError("unknown size ratio '" + name + "'");
}

int control_count(int base_blocks, SizeRatio ratio) {
    if (base_blocks < 1) throw ParameterError("base block count must be positive");
    const double divisor = ratio == SizeRatio::small ? 15.0 : ratio == SizeRatio::medium ? 5.0 : 2.0;
    const long n = std::lround(static_cast<double>(base_blocks) / divisor);
    return static_cast<int>(std::clamp<long>(n, 1, base_blocks));
}

std::vector<int> control_indices(int base_blocks, int control_blocks, Layout layout) {
    check_blocks(base_blocks, control_blocks);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(control_blocks));
    if (layout == Layout::end) {
        for (int k = 1; k <= control_blocks; ++k) out.push_back(base_blocks - control_blocks + k);
        return out;
    }
    const int stride = base_blocks / control_blocks;
    for (int k = 1; k <= control_blocks; ++k) out.push_back((k - 1) * stride + 1);
    return out;
}

NetworkSpec make_network_spec(int base_blocks, Layout layout, SizeRatio ratio) {
    NetworkSpec s = make_network_spec(base_blocks, control_count(base_blocks, ratio), layout);
    s.ratio = ratio;
    return s;
}

NetworkSpec make_network_spec(int base_blocks, int control_blocks, Layout layout) {
    NetworkSpec s;
    s.base_blocks = base_blocks;
    s.control_blocks = control_blocks;
    s.layout = layout;
    s.indices = control_indices(base_blocks, control_blocks, layout);
    return s;
}

void validate_spec(const NetworkSpec& spec) {
    if (spec.control_blocks < 1 || spec.control_blocks > spec.base_blocks) {
        throw ConfigurationError("network spec needs 1 <= N <= M");
    }
    if (spec.indices != control_indices(spec.base_blocks, spec.control_blocks, spec.layout)) {
        throw ConfigurationError("control indices are inconsistent with the " + to_string(spec.layout) + " layout");
    }
    if (spec.ratio && control_count(spec.base_blocks, *spec.ratio) != spec.control_blocks) {
        throw ConfigurationError("control block count disagrees with the " + to_string(*spec.ratio) + " ratio");
    }
}

FusionSchedule fusion_schedule(const NetworkSpec& spec) {
    FusionSchedule s;
    s.advance.assign(static_cast<std::size_t>(spec.base_blocks), -1);
    s.fuse.assign(static_cast<std::size_t>(spec.base_blocks), -1);
    for (std::size_t k = 0; k < spec.indices.size(); ++k) {
        const int anchor = spec.indices[k] - 1;
        s.advance[static_cast<std::size_t>(anchor)] = static_cast<int>(k);
        s.fuse[static_cast<std::size_t>(anchor)] = static_cast<int>(k);
        if (spec.layout == Layout::even) {
            const int stop = k + 1 < spec.indices.size() ? spec.indices[k + 1] - 1 : spec.base_blocks;
            for (int i = anchor; i < stop; ++i) s.fuse[static_cast<std::size_t>(i)] = static_cast<int>(k);
        }
    }
    return s;
}

VCtrlParams init_adapter(const VCtrlConfig& config, int base_width, int control_blocks, std::uint64_t seed) {
    if (config.width < 1 || config.heads < 1 || config.width % config.heads != 0) {
        throw ConfigurationError("adapter width must be divisible by its head count");
    }
    if (control_blocks < 1) throw ConfigurationError("adapter needs at least one control block");
    std::mt19937_64 rng(seed);
    VCtrlParams p;
    p.config = config;
    p.gain = Mat::Ones(1, config.control_channels);
    p.shift = Mat::Zero(1, config.control_channels);
    p.align = nn::init_linear(config.control_channels, config.width, 1.0, rng);
    p.entry = nn::init_linear(base_width, config.width, 1.0, rng);
    const double out_scale = 1.0 / std::sqrt(2.0 * control_blocks);
    for (int k = 0; k < control_blocks; ++k) {
        p.blocks.push_back(nn::init_block(config.width, config.width * config.mlp_ratio, out_scale, rng));
        p.fuse_out.push_back(nn::Linear::zeros(config.width, config.width));
    }
    return p;
}

VCtrlParams zeros_like(const VCtrlParams& like) {
    VCtrlParams z = like;
    visit_adapter(z, [](const std::string&, Mat& m) { m.setZero(); });
    return z;
}

std::vector<NamedTensor> to_named_tensors(const VCtrlParams& params) {
    std::vector<NamedTensor> out;
    visit_adapter(params, [&](const std::string& name, const Mat& m) {
        out.push_back({name,
                       {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                       std::vector<double>(m.data(), m.data() + m.size())});
    });
    return out;
}

VCtrlParams adapter_from_named_tensors(const VCtrlConfig& config, int base_width, int control_blocks,
                                       const std::vector<NamedTensor>& tensors) {
    VCtrlParams p = init_adapter(config, base_width, control_blocks, 0);
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    std::size_t seen = 0;
    visit_adapter(p, [&](const std::string& name, Mat& m) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigurationError("adapter archive is missing tensor " + name);
        const auto& t = *it->second;
        if (t.shape.size() != 2 || t.shape[0] != m.rows() || t.shape[1] != m.cols()) {
            throw DimensionError("adapter tensor " + name + " has an unexpected shape");
        }
        std::copy(t.values.begin(), t.values.end(), m.data());
        ++seen;
    });
    if (seen != by_name.size()) throw ConfigurationError("adapter archive holds unexpected tensors");
    return p;
}

nlohmann::ordered_json spec_to_json(const NetworkSpec& spec, int control_width) {
    nlohmann::ordered_json j;
    j["M"] = spec.base_blocks;
    j["N"] = spec.control_blocks;
    j["layout"] = to_string(spec.layout);
    j["ratio"] = spec.ratio ? nlohmann::ordered_json(to_string(*spec.ratio)) : nlohmann::ordered_json(nullptr);
    j["d_c"] = control_width;
    j["indices"] = spec.indices;
    return j;
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.base_blocks = j.at("M").get<int>();
    s.control_blocks = j.at("N").get<int>();
    s.layout = layout_from_string(j.at("layout").get<std::string>());
    if (!j.at("ratio").is_null()) s.ratio = ratio_from_string(j.at("ratio").get<std::string>());
    s.indices = j.at("indices").get<std::vector<int>>();
    validate_spec(s);
    return s;
}

Mat adaptive_avg_pool(const Mat& x, int out_width) {
    const auto in_width = x.cols();
    if (in_width < 1 || out_width < 1) throw ParameterError("adaptive pooling widths must be positive");
    Mat y(x.rows(), out_width);
    for (Eigen::Index j = 0; j < out_width; ++j) {
        const Eigen::Index start = j * in_width / out_width;
        const Eigen::Index end = ((j + 1) * in_width + out_width - 1) / out_width;
        y.col(j) = x.middleCols(start, end - start).rowwise().sum() / static_cast<double>(end - start);
    }
    return y;
}

Mat adaptive_avg_pool_backward(const Mat& dy, int in_width) {
    const auto out_width = dy.cols();
    Mat dx = Mat::Zero(dy.rows(), in_width);
    for (Eigen::Index j = 0; j < out_width; ++j) {
        const Eigen::Index start = j * in_width / out_width;
        const Eigen::Index end = ((j + 1) * in_width + out_width - 1) / out_width;
        const double inv = 1.0 / static_cast<double>(end - start);
        for (Eigen::Index i = start; i < end; ++i) dx.col(i) += dy.col(j) * inv;
    }
    return dx;
}

TokenMap adaptive_avg_pool(const TokenMap& y_c, int out_width) { return {adaptive_avg_pool(y_c.tokens, out_width), y_c.grid}; }

Mat dist_align_forward(const VCtrlParams& p, const Mat& bundle_tokens, Eigen::Index seg_len, DistAlignCache& cache) {
    if (bundle_tokens.cols() != p.config.control_channels) throw DimensionError("control bundle channel count mismatch");
    cache.normalized.resize(bundle_tokens.rows(), bundle_tokens.cols());
    const Eigen::Index segments = bundle_tokens.rows() / seg_len;
    for (Eigen::Index s = 0; s < segments; ++s) {
        const auto in = bundle_tokens.middleRows(s * seg_len, seg_len);
        const Eigen::RowVectorXd rms =
            ((in.array().square().colwise().sum() / static_cast<double>(seg_len)) + kRmsEps).sqrt();
        cache.normalized.middleRows(s * seg_len, seg_len) = in.array().rowwise() / rms.array();
    }
    cache.affine = cache.normalized.array().rowwise() * p.gain.row(0).array();
    cache.affine.rowwise() += p.shift.row(0);
    return nn::linear_forward(cache.affine, p.align);
}

TokenMap dist_align(const ControlBundle& bundle, const VCtrlParams& p) {
    const auto& d = bundle.z_m.dims;
    DistAlignCache cache;
    const Mat tokens = tokenize(bundle.z_m);
    return {dist_align_forward(p, tokens, tokens.rows(), cache), Grid{d[0], d[1], d[2]}};
}

Mat controlled_forward_batch(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec,
                             const DenoiserInput& in, ControlTrace* trace) {
    validate_input(base, in);
    validate_pair(base, adapter, spec, in);
    ControlTrace local;
    ControlTrace& tr = trace ? *trace : local;
    const auto n = static_cast<Eigen::Index>(base.config.grid.tokens());
    const FusionSchedule schedule = fusion_schedule(spec);

    Mat x = embed_forward(base, in, tr.base.embed);
    tr.x0 = x;
    Mat ctrl = nn::linear_forward(x, adapter.entry) + dist_align_forward(adapter, in.control, n, tr.align);

    const auto m = base.blocks.size();
    tr.base.blocks.resize(m);
    tr.base.outputs.resize(m);
    tr.ctrl_blocks.resize(adapter.blocks.size());
    tr.ctrl_states.resize(adapter.blocks.size());
    Mat residual;
    for (std::size_t i = 0; i < m; ++i) {
        x = nn::block_forward(x, base.blocks[i], base.config.heads, n, tr.base.blocks[i]);
        tr.base.outputs[i] = x;
        if (const int k = schedule.advance[i]; k >= 0) {
            const auto kk = static_cast<std::size_t>(k);
            ctrl = nn::block_forward(ctrl, adapter.blocks[kk], adapter.config.heads, n, tr.ctrl_blocks[kk]);
            tr.ctrl_states[kk] = ctrl;
            residual = adaptive_avg_pool(nn::linear_forward(ctrl, adapter.fuse_out[kk]), base.config.width);
        }
        if (schedule.fuse[i] >= 0) x += residual;
    }
    return head_forward(base, x, tr.base.embed.offset, tr.base.head);
}

void controlled_backward_batch(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec,
                               const ControlTrace& tr, const Mat& dout, BaseParams* base_grad,
                               VCtrlParams* adapter_grad) {
    const auto n = static_cast<Eigen::Index>(base.config.grid.tokens());
    const FusionSchedule schedule = fusion_schedule(spec);
    const int d_c = adapter.config.width;

    const Mat dh = head_backward(base, tr.base.head, dout, base_grad);
    Mat dx = dh;
    std::vector<Mat> dres(adapter.blocks.size());
    Mat dctrl;  // gradient w.r.t. the control stream state consumed by the next control block
    for (std::size_t i = base.blocks.size(); i-- > 0;) {
        if (const int k = schedule.fuse[i]; k >= 0) {
            auto& acc = dres[static_cast<std::size_t>(k)];
            if (acc.size() == 0) acc = dx;
            else acc += dx;
        }
        if (const int k = schedule.advance[i]; k >= 0) {
            const auto kk = static_cast<std::size_t>(k);
            const Mat dfuse = adaptive_avg_pool_backward(dres[kk], d_c);
            Mat dstate = nn::linear_backward(tr.ctrl_states[kk], adapter.fuse_out[kk], dfuse,
                                             adapter_grad ? &adapter_grad->fuse_out[kk] : nullptr);
            if (dctrl.size() != 0) dstate += dctrl;
            dctrl = nn::block_backward(tr.ctrl_blocks[kk], adapter.blocks[kk], adapter.config.heads, n, dstate,
                                       adapter_grad ? &adapter_grad->blocks[kk] : nullptr);
        }
        // Without base gradients nothing below the first control point matters.
        if (!base_grad && static_cast<int>(i) + 1 == spec.indices.front()) break;
        dx = nn::block_backward(tr.base.blocks[i], base.blocks[i], base.config.heads, n, dx,
                                base_grad ? &base_grad->blocks[i] : nullptr);
    }

    if (adapter_grad) {
        const Mat daffine = nn::linear_backward(tr.align.affine, adapter.align, dctrl, &adapter_grad->align);
        adapter_grad->gain += (daffine.array() * tr.align.normalized.array()).colwise().sum().matrix();
        adapter_grad->shift += daffine.colwise().sum();
    }
    const Mat dx0 = nn::linear_backward(tr.x0, adapter.entry, dctrl, adapter_grad ? &adapter_grad->entry : nullptr);
    if (base_grad) {
        dx += dx0;
        embed_backward(base, tr.base.embed, dx, dh, base_grad);
    }
}

DenoiserOutput controlled_forward(const LatentTensor& z_t, int t, int prompt, const ControlBundle& bundle,
                                  const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec) {
    const Grid grid{z_t.data.dims[0], z_t.data.dims[1], z_t.data.dims[2]};
    if (!(grid == base.config.grid)) throw DimensionError("latent grid does not match the model token grid");
    const auto& bd = bundle.z_m.dims;
    if (bd[0] != grid.f || bd[1] != grid.h || bd[2] != grid.w) throw DimensionError("control bundle grid mismatch");
    DenoiserInput in;
    in.z = tokenize(z_t.data);
    in.t = {t};
    in.prompt = {prompt};
    in.control = tokenize(bundle.z_m);
    ControlTrace trace;
    const Mat out = controlled_forward_batch(base, adapter, spec, in, &trace);
    DenoiserOutput result;
    result.eps_hat = {untokenize(out, grid), z_t.patch};
    for (std::size_t i = 0; i < trace.base.blocks.size(); ++i) {
        result.taps.push_back({trace.base.blocks[i].x, trace.base.outputs[i]});
    }
    return result;
}

}  // namespace vctrl
