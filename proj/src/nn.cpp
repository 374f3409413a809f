#include "vctrl/nn.hpp"

#include <cmath>
#include <numbers>

namespace vctrl::nn {

namespace {
constexpr double kNormEps = 1e-5;
}

Linear init_linear(Eigen::Index in, Eigen::Index out, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, scale / std::sqrt(static_cast<double>(in)));
    Linear l = Linear::zeros(in, out);
    for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = normal(rng);
    return l;
}

BlockParams init_block(Eigen::Index d, Eigen::Index mlp_hidden, double out_scale, std::mt19937_64& rng) {
    BlockParams b;
    b.ln1 = LayerNorm::identity(d);
    b.q = init_linear(d, d, 1.0, rng);
    b.k = init_linear(d, d, 1.0, rng);
    b.v = init_linear(d, d, 1.0, rng);
    b.o = init_linear(d, d, out_scale, rng);
    b.ln2 = LayerNorm::identity(d);
    b.fc1 = init_linear(d, mlp_hidden, 1.0, rng);
    b.fc2 = init_linear(mlp_hidden, d, out_scale, rng);
    return b;
}

BlockParams zeros_like(const BlockParams& like) {
    BlockParams z = like;
    visit_block(z, "", [](const std::string&, Mat& m) { m.setZero(); });
    return z;
}

Mat linear_forward(const Mat& x, const Linear& l) {
    Mat y(x.rows(), l.w.cols());
    y.noalias() = x * l.w;
    y.rowwise() += l.b.row(0);
    return y;
}

Mat linear_backward(const Mat& x, const Linear& l, const Mat& dy, Linear* grad) {
    if (grad) {
        grad->w.noalias() += x.transpose() * dy;
        grad->b += dy.colwise().sum();
    }
    Mat dx(dy.rows(), l.w.rows());
    dx.noalias() = dy * l.w.transpose();
    return dx;
}

Mat layer_norm_forward(const Mat& x, const LayerNorm& p, LayerNormCache& cache) {
    const auto n = x.rows();
    const auto d = static_cast<double>(x.cols());
    cache.xhat.resize(n, x.cols());
    cache.rstd.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mu = x.row(r).sum() / d;
        const double var = (x.row(r).array() - mu).square().sum() / d;
        const double rstd = 1.0 / std::sqrt(var + kNormEps);
        cache.rstd(r) = rstd;
        cache.xhat.row(r) = (x.row(r).array() - mu) * rstd;
    }
    Mat y = cache.xhat.array().rowwise() * p.gamma.row(0).array();
    y.rowwise() += p.beta.row(0);
    return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const LayerNorm& p, const Mat& dy, LayerNorm* grad) {
    if (grad) {
        grad->gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
        grad->beta += dy.colwise().sum();
    }
    const auto d = static_cast<double>(dy.cols());
    Mat dxhat = dy.array().rowwise() * p.gamma.row(0).array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(cache.xhat.row(r)) / d;
        dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

Mat attention_forward(const Mat& h, const BlockParams& p, int heads, Eigen::Index seg_len, AttentionCache& cache) {
    const Eigen::Index d = h.cols();
    const Eigen::Index dh = d / heads;
    const Eigen::Index segments = h.rows() / seg_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.h = h;
    cache.q = linear_forward(h, p.q);
    cache.k = linear_forward(h, p.k);
    cache.v = linear_forward(h, p.v);
    cache.ctx.resize(h.rows(), d);
    cache.probs.resize(static_cast<std::size_t>(segments * heads));
    for (Eigen::Index s = 0; s < segments; ++s) {
        for (int j = 0; j < heads; ++j) {
            const auto qs = cache.q.block(s * seg_len, j * dh, seg_len, dh);
            const auto ks = cache.k.block(s * seg_len, j * dh, seg_len, dh);
            const auto vs = cache.v.block(s * seg_len, j * dh, seg_len, dh);
            Mat& prob = cache.probs[static_cast<std::size_t>(s * heads + j)];
            prob.noalias() = (qs * ks.transpose()) * scale;
            for (Eigen::Index r = 0; r < seg_len; ++r) {
                const double mx = prob.row(r).maxCoeff();
                prob.row(r) = (prob.row(r).array() - mx).exp();
                prob.row(r) /= prob.row(r).sum();
            }
            cache.ctx.block(s * seg_len, j * dh, seg_len, dh).noalias() = prob * vs;
        }
    }
    return linear_forward(cache.ctx, p.o);
}

Mat attention_backward(const AttentionCache& cache, const BlockParams& p, int heads, Eigen::Index seg_len,
                       const Mat& dout, BlockParams* grad) {
    const Eigen::Index d = cache.h.cols();
    const Eigen::Index dh = d / heads;
    const Eigen::Index segments = cache.h.rows() / seg_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Mat dctx = linear_backward(cache.ctx, p.o, dout, grad ? &grad->o : nullptr);
    Mat dq(cache.h.rows(), d), dk(cache.h.rows(), d), dv(cache.h.rows(), d);
    Mat dprob, dscore;
    for (Eigen::Index s = 0; s < segments; ++s) {
        for (int j = 0; j < heads; ++j) {
            const Mat& prob = cache.probs[static_cast<std::size_t>(s * heads + j)];
            const auto qs = cache.q.block(s * seg_len, j * dh, seg_len, dh);
            const auto ks = cache.k.block(s * seg_len, j * dh, seg_len, dh);
            const auto vs = cache.v.block(s * seg_len, j * dh, seg_len, dh);
            const auto dcs = dctx.block(s * seg_len, j * dh, seg_len, dh);
            dprob.noalias() = dcs * vs.transpose();
            dv.block(s * seg_len, j * dh, seg_len, dh).noalias() = prob.transpose() * dcs;
            dscore = prob.array() * (dprob.array().colwise() - (dprob.array() * prob.array()).rowwise().sum());
            dscore *= scale;
            dq.block(s * seg_len, j * dh, seg_len, dh).noalias() = dscore * ks;
            dk.block(s * seg_len, j * dh, seg_len, dh).noalias() = dscore.transpose() * qs;
        }
    }
    Mat dh_in = linear_backward(cache.h, p.q, dq, grad ? &grad->q : nullptr);
    dh_in += linear_backward(cache.h, p.k, dk, grad ? &grad->k : nullptr);
    dh_in += linear_backward(cache.h, p.v, dv, grad ? &grad->v : nullptr);
    return dh_in;
}

Mat block_forward(const Mat& x, const BlockParams& p, int heads, Eigen::Index seg_len, BlockCache& cache) {
    cache.x = x;
    const Mat h1 = layer_norm_forward(x, p.ln1, cache.ln1);
    cache.x1 = x + attention_forward(h1, p, heads, seg_len, cache.attn);
    cache.h2 = layer_norm_forward(cache.x1, p.ln2, cache.ln2);
    cache.u = linear_forward(cache.h2, p.fc1);
    cache.cdf = cache.u.unaryExpr([](double v) { return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)); });
    cache.g = cache.u.cwiseProduct(cache.cdf);
    return cache.x1 + linear_forward(cache.g, p.fc2);
}

Mat block_backward(const BlockCache& cache, const BlockParams& p, int heads, Eigen::Index seg_len, const Mat& dy,
                   BlockParams* grad) {
    Mat dg = linear_backward(cache.g, p.fc2, dy, grad ? &grad->fc2 : nullptr);
    // gelu'(u) = cdf(u) + u pdf(u), reusing the forward cdf
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const Mat du = dg.array() * (cache.cdf.array() + cache.u.array() * (-0.5 * cache.u.array().square()).exp() * inv_sqrt_2pi);
    const Mat dh2 = linear_backward(cache.h2, p.fc1, du, grad ? &grad->fc1 : nullptr);
    Mat dx1 = dy + layer_norm_backward(cache.ln2, p.ln2, dh2, grad ? &grad->ln2 : nullptr);
    const Mat dh1 = attention_backward(cache.attn, p, heads, seg_len, dx1, grad);
    return dx1 + layer_norm_backward(cache.ln1, p.ln1, dh1, grad ? &grad->ln1 : nullptr);
}

Eigen::RowVectorXd timestep_features(int t, Eigen::Index dim) {
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(dim);
    const Eigen::Index half = dim / 2;
    for (Eigen::Index i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out(i) = std::sin(t * freq);
        out(half + i) = std::cos(t * freq);
    }
    return out;
}

}  // namespace vctrl::nn
