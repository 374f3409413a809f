#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

namespace vctrl::nn {

// Token matrices are row-major: one token per row, features along columns.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Linear {
    Mat w;  // in x out
    Mat b;  // 1 x out

    static Linear zeros(Eigen::Index in, Eigen::Index out) { return {Mat::Zero(in, out), Mat::Zero(1, out)}; }
};

struct LayerNorm {
    Mat gamma;  // 1 x d
    Mat beta;   // 1 x d

    static LayerNorm identity(Eigen::Index d) { return {Mat::Ones(1, d), Mat::Zero(1, d)}; }
};

// Pre-norm transformer block: x + attn(ln1(x)), then + mlp(ln2(.)).
struct BlockParams {
    LayerNorm ln1;
    Linear q, k, v, o;
    LayerNorm ln2;
    Linear fc1, fc2;
};

Linear init_linear(Eigen::Index in, Eigen::Index out, double scale, std::mt19937_64& rng);
BlockParams init_block(Eigen::Index d, Eigen::Index mlp_hidden, double out_scale, std::mt19937_64& rng);
// Same shapes as `like`, all zero.
BlockParams zeros_like(const BlockParams& like);

Mat linear_forward(const Mat& x, const Linear& l);
// Returns dL/dx. Parameter gradients are accumulated into `grad` when non-null.
Mat linear_backward(const Mat& x, const Linear& l, const Mat& dy, Linear* grad);

struct LayerNormCache {
    Mat xhat;
    Eigen::VectorXd rstd;
};
Mat layer_norm_forward(const Mat& x, const LayerNorm& p, LayerNormCache& cache);
Mat layer_norm_backward(const LayerNormCache& cache, const LayerNorm& p, const Mat& dy, LayerNorm* grad);

double gelu(double x);
double gelu_grad(double x);
double silu(double x);
double silu_grad(double x);

struct AttentionCache {
    Mat h, q, k, v, ctx;
    std::vector<Mat> probs;  // per (segment, head), segment-major
};

// Multi-head self-attention restricted to contiguous segments of `seg_len`
// rows (one segment per sample in a batch).
Mat attention_forward(const Mat& h, const BlockParams& p, int heads, Eigen::Index seg_len, AttentionCache& cache);
Mat attention_backward(const AttentionCache& cache, const BlockParams& p, int heads, Eigen::Index seg_len,
                       const Mat& dout, BlockParams* grad);

struct BlockCache {
    Mat x, x1, h2, u, cdf, g;
    LayerNormCache ln1, ln2;
    AttentionCache attn;
};

Mat block_forward(const Mat& x, const BlockParams& p, int heads, Eigen::Index seg_len, BlockCache& cache);
Mat block_backward(const BlockCache& cache, const BlockParams& p, int heads, Eigen::Index seg_len, const Mat& dy,
                   BlockParams* grad);

// Sinusoidal embedding of an integer timestep: [sin(t w_i), cos(t w_i)],
// w_i = 10000^(-i/half).
Eigen::RowVectorXd timestep_features(int t, Eigen::Index dim);

template <class P, class F>
void visit_linear(P& l, const std::string& prefix, F&& f) {
    f(prefix + ".w", l.w);
    f(prefix + ".b", l.b);
}

template <class P, class F>
void visit_norm(P& n, const std::string& prefix, F&& f) {
    f(prefix + ".gamma", n.gamma);
    f(prefix + ".beta", n.beta);
}

template <class P, class F>
void visit_block(P& b, const std::string& prefix, F&& f) {
    visit_norm(b.ln1, prefix + ".ln1", f);
    visit_linear(b.q, prefix + ".attn.q", f);
    visit_linear(b.k, prefix + ".attn.k", f);
    visit_linear(b.v, prefix + ".attn.v", f);
    visit_linear(b.o, prefix + ".attn.o", f);
    visit_norm(b.ln2, prefix + ".ln2", f);
    visit_linear(b.fc1, prefix + ".mlp.fc1", f);
    visit_linear(b.fc2, prefix + ".mlp.fc2", f);
}

}  // namespace vctrl::nn
