#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vctrl/base_denoiser.hpp"
#include "vctrl/control_encoder.hpp"

namespace vctrl {

enum class Layout { even, end, space };
enum class SizeRatio { small, medium, large };

std::string to_string(Layout layout);
std::string to_string(SizeRatio ratio);
Layout layout_from_string(const std::string& name);
SizeRatio ratio_from_string(const std::string& name);

// small 1:15, medium 1:5, large 1:2, rounded, at least 1 and at most M.
int control_count(int base_blocks, SizeRatio ratio);

// 1-based base-block indices where control branches attach.
//   space: (k-1) * floor(M/N) + 1 for k = 1..N
//   end:   M-N+1 .. M
//   even:  same anchors as space; fusion additionally repeats over each
//          anchor's interval (see FusionSchedule)
std::vector<int> control_indices(int base_blocks, int control_blocks, Layout layout);

struct NetworkSpec {
    int base_blocks = 12;    // M
    int control_blocks = 2;  // N
    Layout layout = Layout::space;
    std::optional<SizeRatio> ratio;
    std::vector<int> indices;
};

NetworkSpec make_network_spec(int base_blocks, Layout layout, SizeRatio ratio);
NetworkSpec make_network_spec(int base_blocks, int control_blocks, Layout layout);
// Throws ConfigurationError if the index set disagrees with the layout rule.
void validate_spec(const NetworkSpec& spec);

// Per base block (0-based): which control block advances there and which
// held control residual is added to its output; -1 for none.
struct FusionSchedule {
    std::vector<int> advance;
    std::vector<int> fuse;
};
FusionSchedule fusion_schedule(const NetworkSpec& spec);

struct VCtrlConfig {
    int control_channels = 97;  // ch + 1
    int width = 32;             // d_c
    int heads = 4;
    int mlp_ratio = 4;
};

struct VCtrlParams {
    VCtrlConfig config;
    Mat gain;         // 1 x (ch+1)
    Mat shift;        // 1 x (ch+1)
    nn::Linear align;  // (ch+1) -> d_c
    nn::Linear entry;  // d_b -> d_c, applied to x_0
    std::vector<nn::BlockParams> blocks;
    std::vector<nn::Linear> fuse_out;  // d_c -> d_c, zero at init
};

template <class P, class F>
void visit_adapter(P& p, F&& f) {
    f("dist_align.gain", p.gain);
    f("dist_align.shift", p.shift);
    nn::visit_linear(p.align, "dist_align.proj", f);
    nn::visit_linear(p.entry, "entry.x0", f);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) nn::visit_block(p.blocks[i], "blocks." + std::to_string(i), f);
    for (std::size_t i = 0; i < p.fuse_out.size(); ++i) nn::visit_linear(p.fuse_out[i], "fuse_out." + std::to_string(i), f);
}

VCtrlParams init_adapter(const VCtrlConfig& config, int base_width, int control_blocks, std::uint64_t seed);
VCtrlParams zeros_like(const VCtrlParams& like);
std::vector<NamedTensor> to_named_tensors(const VCtrlParams& params);
VCtrlParams adapter_from_named_tensors(const VCtrlConfig& config, int base_width, int control_blocks,
                                       const std::vector<NamedTensor>& tensors);

nlohmann::ordered_json spec_to_json(const NetworkSpec& spec, int control_width);
NetworkSpec spec_from_json(const nlohmann::json& j);

// Bin j of d_out covers [floor(j*d_in/d_out), ceil((j+1)*d_in/d_out)).
Mat adaptive_avg_pool(const Mat& x, int out_width);
Mat adaptive_avg_pool_backward(const Mat& dy, int in_width);
TokenMap adaptive_avg_pool(const TokenMap& y_c, int out_width);

struct DistAlignCache {
    Mat normalized;  // per-sample channel-RMS normalized bundle
    Mat affine;      // gain * normalized + shift
};

// Per-sample RMS normalization of every channel over tokens, learned gain
// and shift, then projection to d_c.
Mat dist_align_forward(const VCtrlParams& p, const Mat& bundle_tokens, Eigen::Index seg_len, DistAlignCache& cache);
TokenMap dist_align(const ControlBundle& bundle, const VCtrlParams& p);

struct ControlTrace {
    BaseTrace base;
    DistAlignCache align;
    Mat x0;
    std::vector<nn::BlockCache> ctrl_blocks;
    std::vector<Mat> ctrl_states;  // output of control block k
};

Mat controlled_forward_batch(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec,
                             const DenoiserInput& in, ControlTrace* trace);
// Gradients go to whichever of base_grad / adapter_grad is non-null.
void controlled_backward_batch(const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec,
                               const ControlTrace& trace, const Mat& dout, BaseParams* base_grad,
                               VCtrlParams* adapter_grad);

DenoiserOutput controlled_forward(const LatentTensor& z_t, int t, int prompt, const ControlBundle& bundle,
                                  const BaseParams& base, const VCtrlParams& adapter, const NetworkSpec& spec);

}  // namespace vctrl
