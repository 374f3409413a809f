#include "vctrl/base_denoiser.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "vctrl/error.hpp"

namespace vctrl {

namespace {

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

}  // namespace

BaseParams init_base(const BaseConfig& c, std::uint64_t seed) {
    if (c.blocks < 1 || c.width < 1 || c.heads < 1 || c.width % c.heads != 0) {
        throw ConfigurationError("base config needs M >= 1 and width divisible by heads");
    }
    std::mt19937_64 rng(seed);
    BaseParams p;
    p.config = c;
    const Eigen::Index d = c.width;
    p.embed = nn::init_linear(c.latent_channels, d, 1.0, rng);
    p.pos = random_matrix(static_cast<Eigen::Index>(c.grid.tokens()), d, 0.1, rng);
    p.t_fc1 = nn::init_linear(d, d, 1.0, rng);
    p.t_fc2 = nn::init_linear(d, d, 1.0, rng);
    p.class_table = random_matrix(c.classes, d, 0.5, rng);
    const double out_scale = 1.0 / std::sqrt(2.0 * c.blocks);
    for (int i = 0; i < c.blocks; ++i) p.blocks.push_back(nn::init_block(d, d * c.mlp_ratio, out_scale, rng));
    p.head = nn::init_linear(d, c.latent_channels, 0.1, rng);

    // orthonormal embed, head = embed^T: head(embed(z)) starts as z (or its projection when d_b < ch)
    const bool wide = d >= c.latent_channels;
    const Mat g = wide ? Mat(p.embed.w.transpose()) : p.embed.w;
    const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ() * Mat::Identity(g.rows(), g.cols());
    p.embed.w = wide ? Mat(q.transpose()) : q;
    p.head.w = p.embed.w.transpose();
    return p;
}

BaseParams zeros_like(const BaseParams& like) {
    BaseParams z = like;
    visit_base(z, [](const std::string&, Mat& m) { m.setZero(); });
    return z;
}

std::vector<NamedTensor> to_named_tensors(const BaseParams& params) {
    std::vector<NamedTensor> out;
    visit_base(params, [&](const std::string& name, const Mat& m) {
        NamedTensor t;
        t.name = name;
        t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
        t.values.assign(m.data(), m.data() + m.size());
        out.push_back(std::move(t));
    });
    return out;
}

BaseParams base_from_named_tensors(const BaseConfig& config, const std::vector<NamedTensor>& tensors) {
    BaseParams p = init_base(config, 0);
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    visit_base(p, [&](const std::string& name, Mat& m) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigurationError("archive is missing tensor " + name);
        const auto& t = *it->second;
        if (t.shape.size() != 2 || t.shape[0] != m.rows() || t.shape[1] != m.cols()) {
            throw DimensionError("tensor " + name + " has a shape inconsistent with the model config");
        }
        std::copy(t.values.begin(), t.values.end(), m.data());
    });
    if (by_name.size() != to_named_tensors(p).size()) throw ConfigurationError("archive holds unexpected tensors");
    return p;
}

std::string params_hash(const BaseParams& params) {
    std::vector<char> bytes;
    visit_base(params, [&](const std::string& name, const Mat& m) {
        bytes.insert(bytes.end(), name.begin(), name.end());
        const auto* raw = reinterpret_cast<const char*>(m.data());
        bytes.insert(bytes.end(), raw, raw + m.size() * static_cast<Eigen::Index>(sizeof(double)));
    });
    return fnv1a_hex(bytes);
}

Mat tokenize(const Tensor4& latent) {
    const auto n = static_cast<Eigen::Index>(latent.dims[0] * latent.dims[1] * latent.dims[2]);
    const auto ch = static_cast<Eigen::Index>(latent.dims[3]);
    Mat m(n, ch);
    std::memcpy(m.data(), latent.data.data(), latent.data.size() * sizeof(double));
    return m;
}

Tensor4 untokenize(const Mat& tokens, const Grid& grid) {
    if (tokens.rows() != static_cast<Eigen::Index>(grid.tokens())) throw DimensionError("token count differs from grid");
    Tensor4 t(grid.f, grid.h, grid.w, static_cast<std::size_t>(tokens.cols()));
    std::memcpy(t.data.data(), tokens.data(), t.data.size() * sizeof(double));
    return t;
}

void validate_input(const BaseParams& p, const DenoiserInput& in) {
    const auto& c = p.config;
    const auto n = static_cast<Eigen::Index>(c.grid.tokens());
    if (in.prompt.size() != in.t.size()) throw DimensionError("prompt and timestep batch sizes differ");
    if (in.z.rows() != n * static_cast<Eigen::Index>(in.batch())) {
        throw DimensionError("latent token rows do not match the model grid times batch");
    }
    if (in.z.cols() != c.latent_channels) {
        throw DimensionError("latent channel axis ch=" + std::to_string(in.z.cols()) + " but the model expects " +
                             std::to_string(c.latent_channels));
    }
    for (int prompt : in.prompt) {
        if (prompt < 0 || prompt >= c.classes) throw ConditioningError("unknown prompt id " + std::to_string(prompt));
    }
}

Mat embed_forward(const BaseParams& p, const DenoiserInput& in, EmbedCache& cache) {
    const auto n = static_cast<Eigen::Index>(p.config.grid.tokens());
    const auto batch = static_cast<Eigen::Index>(in.batch());
    const Eigen::Index d = p.config.width;
    cache.z = in.z;
    cache.prompt = in.prompt;
    cache.t_feat.resize(batch, d);
    for (Eigen::Index b = 0; b < batch; ++b) cache.t_feat.row(b) = nn::timestep_features(in.t[b], d);
    cache.t_pre = nn::linear_forward(cache.t_feat, p.t_fc1);
    cache.t_act = cache.t_pre.unaryExpr([](double v) { return nn::silu(v); });
    const Mat t_emb = nn::linear_forward(cache.t_act, p.t_fc2);

    cache.offset.resize(batch * n, d);
    for (Eigen::Index b = 0; b < batch; ++b) {
        auto rows = cache.offset.middleRows(b * n, n);
        rows = p.pos;
        rows.rowwise() += t_emb.row(b) + p.class_table.row(in.prompt[b]);
    }
    return nn::linear_forward(in.z, p.embed) + cache.offset;
}

void embed_backward(const BaseParams& p, const EmbedCache& cache, const Mat& dx0, const Mat& dhead, BaseParams* grad) {
    if (!grad) return;
    const auto n = static_cast<Eigen::Index>(p.config.grid.tokens());
    const auto batch = static_cast<Eigen::Index>(cache.prompt.size());
    nn::linear_backward(cache.z, p.embed, dx0, &grad->embed);
    const Mat doff = dx0 - dhead;
    Mat dcond(batch, dx0.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto rows = doff.middleRows(b * n, n);
        grad->pos += rows;
        dcond.row(b) = rows.colwise().sum();
        grad->class_table.row(cache.prompt[b]) += dcond.row(b);
    }
    const Mat dact = nn::linear_backward(cache.t_act, p.t_fc2, dcond, &grad->t_fc2);
    const Mat dpre = dact.array() * cache.t_pre.unaryExpr([](double v) { return nn::silu_grad(v); }).array();
    nn::linear_backward(cache.t_feat, p.t_fc1, dpre, &grad->t_fc1);
}

Mat head_forward(const BaseParams& p, const Mat& x, const Mat& offset, HeadCache& cache) {
    cache.x = x - offset;
    return nn::linear_forward(cache.x, p.head);
}

Mat head_backward(const BaseParams& p, const HeadCache& cache, const Mat& dout, BaseParams* grad) {
    return nn::linear_backward(cache.x, p.head, dout, grad ? &grad->head : nullptr);
}

Mat base_forward_batch(const BaseParams& p, const DenoiserInput& in, BaseTrace* trace) {
    validate_input(p, in);
    BaseTrace local;
    BaseTrace& tr = trace ? *trace : local;
    const auto n = static_cast<Eigen::Index>(p.config.grid.tokens());
    Mat x = embed_forward(p, in, tr.embed);
    tr.blocks.resize(p.blocks.size());
    tr.outputs.resize(p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        x = nn::block_forward(x, p.blocks[i], p.config.heads, n, tr.blocks[i]);
        tr.outputs[i] = x;
    }
    return head_forward(p, x, tr.embed.offset, tr.head);
}

void base_backward_batch(const BaseParams& p, const BaseTrace& tr, const Mat& dout, BaseParams& grad) {
    const auto n = static_cast<Eigen::Index>(p.config.grid.tokens());
    const Mat dh = head_backward(p, tr.head, dout, &grad);
    Mat dx = dh;
    for (std::size_t i = p.blocks.size(); i-- > 0;) {
        dx = nn::block_backward(tr.blocks[i], p.blocks[i], p.config.heads, n, dx, &grad.blocks[i]);
    }
    embed_backward(p, tr.embed, dx, dh, &grad);
}

TokenMap block_forward(const TokenMap& x, const nn::BlockParams& block, int heads, std::span<const double> cond) {
    const Eigen::Index d = block.ln1.gamma.cols();
    if (x.tokens.cols() != d) {
        throw DimensionError("token width " + std::to_string(x.tokens.cols()) + " but block width is " + std::to_string(d));
    }
    if (heads < 1 || d % heads != 0) throw DimensionError("block width is not divisible by the head count");
    Mat in = x.tokens;
    if (!cond.empty()) {
        if (static_cast<Eigen::Index>(cond.size()) != d) throw DimensionError("conditioning vector width mismatch");
        for (Eigen::Index j = 0; j < d; ++j) in.col(j).array() += cond[static_cast<std::size_t>(j)];
    }
    nn::BlockCache cache;
    return {nn::block_forward(in, block, heads, in.rows(), cache), x.grid};
}

DenoiserOutput base_forward(const BaseParams& p, const LatentTensor& z_t, int t, int prompt) {
    const Grid grid{z_t.data.dims[0], z_t.data.dims[1], z_t.data.dims[2]};
    if (!(grid == p.config.grid)) throw DimensionError("latent grid does not match the model token grid");
    DenoiserInput in;
    in.z = tokenize(z_t.data);
    in.t = {t};
    in.prompt = {prompt};
    BaseTrace trace;
    const Mat out = base_forward_batch(p, in, &trace);
    DenoiserOutput result;
    result.eps_hat = {untokenize(out, grid), z_t.patch};
    for (std::size_t i = 0; i < trace.blocks.size(); ++i) result.taps.push_back({trace.blocks[i].x, trace.outputs[i]});
    return result;
}

}  // namespace vctrl
