#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vctrl/control_extractors.hpp"
#include "vctrl/tensor.hpp"

namespace vctrl {

struct MetricReport {
    std::string name;
    double score = 0.0;
    std::vector<double> per_frame;
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    std::vector<std::string> flags;

    nlohmann::ordered_json to_json() const;
};

constexpr double kDiceEpsilon = 1e-5;

// Adaptive Dice: (2/F) sum_i (|p_i & g_i| + eps) / (|p_i| + |g_i| + eps).
// per_frame holds the summands. Frames where both maps are empty contribute
// 1 each (score 2 when all are empty) and are flagged.
MetricReport canny_matching(const BinaryVolume& pred, const BinaryVolume& gt);

// Sum over frames of ||M_i (pred_i - gt_i)||_1 / ||M_i||_1, mask broadcast over RGB.
// A distance: lower is better.
MetricReport ms_consistency(const VideoTensor& pred, const VideoTensor& gt, const BinaryVolume& masks);

// COCO keypoint tolerances, nose through right ankle.
std::vector<double> coco_sigmas();

// OKS averaged over frames; keypoints invisible in gt are left out of the per-frame mean.
MetricReport pose_similarity(const std::vector<KeypointFrame>& pred, const std::vector<KeypointFrame>& gt,
                             const std::vector<double>& sigmas = coco_sigmas());

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Sample mean and unbiased covariance of rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the trace of the root is
// taken from the eigenvalues of the symmetric S_a^{1/2} S_b S_a^{1/2}.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Fixed 16-dimensional descriptor standing in for a pretrained video encoder:
// RGB means and deviations, mean |frame difference|, mean gradient magnitude,
// and 8 block-mean luma cells (2 x 2 spatial, 2 temporal halves).
Eigen::VectorXd toy_features(const VideoTensor& video);
constexpr int kToyFeatureDim = 16;

double frechet_video_distance(const std::vector<VideoTensor>& a, const std::vector<VideoTensor>& b);

}  // namespace vctrl
