#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vctrl/nn.hpp"
#include "vctrl/tensor.hpp"
#include "vctrl/tensor_io.hpp"

namespace vctrl {

using nn::Mat;

struct Grid {
    std::size_t f = 0, h = 0, w = 0;
    std::size_t tokens() const { return f * h * w; }
    bool operator==(const Grid&) const = default;
};

// Tokens of one sample, row-major over the (f, h, w) grid.
struct TokenMap {
    Mat tokens;  // n_tok x d
    Grid grid;
};

struct BaseConfig {
    int latent_channels = 96;
    Grid grid{4, 4, 4};
    int width = 64;  // d_b
    int heads = 4;
    int blocks = 12;  // M
    int mlp_ratio = 4;
    int classes = 12;
};

struct BaseParams {
    BaseConfig config;
    nn::Linear embed;  // latent channels -> d_b
    Mat pos;           // n_tok x d_b
    nn::Linear t_fc1, t_fc2;
    Mat class_table;  // classes x d_b
    std::vector<nn::BlockParams> blocks;
    nn::Linear head;  // d_b -> latent channels
};

template <class P, class F>
void visit_base(P& p, F&& f) {
    nn::visit_linear(p.embed, "embed", f);
    f("pos", p.pos);
    nn::visit_linear(p.t_fc1, "t_embed.fc1", f);
    nn::visit_linear(p.t_fc2, "t_embed.fc2", f);
    f("c_embed", p.class_table);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) nn::visit_block(p.blocks[i], "blocks." + std::to_string(i), f);
    nn::visit_linear(p.head, "head.proj", f);
}

BaseParams init_base(const BaseConfig& config, std::uint64_t seed);
BaseParams zeros_like(const BaseParams& like);

std::vector<NamedTensor> to_named_tensors(const BaseParams& params);
// Loads values by name into a freshly shaped parameter set for `config`.
BaseParams base_from_named_tensors(const BaseConfig& config, const std::vector<NamedTensor>& tensors);
// Bitwise hash over the in-memory double values.
std::string params_hash(const BaseParams& params);

// A batch of samples flattened to (B * n_tok) rows.
struct DenoiserInput {
    Mat z;  // B*n_tok x ch
    std::vector<int> t;
    std::vector<int> prompt;
    Mat control;  // B*n_tok x (ch+1); empty for base-only forwards
    std::size_t batch() const { return t.size(); }
};

Mat tokenize(const Tensor4& latent);
Tensor4 untokenize(const Mat& tokens, const Grid& grid);

struct EmbedCache {
    Mat z;
    std::vector<int> prompt;
    Mat t_feat, t_pre, t_act;  // B x d_b
    Mat offset;                // pos + timestep + class per token, removed again before the head
};

struct HeadCache {
    Mat x;
};

// x_0 = embed(z_t) + pos + t_embed(t) + c_embed(c)
Mat embed_forward(const BaseParams& p, const DenoiserInput& in, EmbedCache& cache);
// `dhead` is the gradient at the head input; the offset receives dx0 - dhead.
void embed_backward(const BaseParams& p, const EmbedCache& cache, const Mat& dx0, const Mat& dhead, BaseParams* grad);
Mat head_forward(const BaseParams& p, const Mat& x, const Mat& offset, HeadCache& cache);
Mat head_backward(const BaseParams& p, const HeadCache& cache, const Mat& dout, BaseParams* grad);

struct BaseTrace {
    EmbedCache embed;
    std::vector<nn::BlockCache> blocks;
    std::vector<Mat> outputs;  // y_b^i
    HeadCache head;
};

void validate_input(const BaseParams& p, const DenoiserInput& in);
Mat base_forward_batch(const BaseParams& p, const DenoiserInput& in, BaseTrace* trace);
void base_backward_batch(const BaseParams& p, const BaseTrace& trace, const Mat& dout, BaseParams& grad);

// One block on a single sample; `cond` (length d_b) is added to every token
// before the block when non-empty.
TokenMap block_forward(const TokenMap& x, const nn::BlockParams& block, int heads, std::span<const double> cond = {});

struct Tap {
    Mat input;   // x^i
    Mat output;  // y^i
};

struct DenoiserOutput {
    LatentTensor eps_hat;
    std::vector<Tap> taps;
};

DenoiserOutput base_forward(const BaseParams& p, const LatentTensor& z_t, int t, int prompt);

}  // namespace vctrl
