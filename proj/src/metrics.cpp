#include "vctrl/metrics.hpp"

#include <cmath>
#include <string>

#include "vctrl/error.hpp"

namespace vctrl {

namespace {

void check_binary(const BinaryVolume& v, const char* what) {
    if (v.data.size() != v.frames * v.height * v.width) throw ValidationError(std::string(what) + " has a bad size");
    for (std::uint8_t b : v.data)
        if (b > 1) throw ValidationError(std::string(what) + " is not binary");
}

bool same_dims(const BinaryVolume& a, const BinaryVolume& b) {
    return a.frames == b.frames && a.height == b.height && a.width == b.width;
}

void check_covariance(const Eigen::MatrixXd& c, const char* what) {
    if (c.rows() != c.cols()) throw ValidationError(std::string(what) + " covariance is not square");
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw ValidationError(std::string(what) + " covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
    if (c.rows() > 0 && es.eigenvalues().minCoeff() < -1e-8)
        throw ValidationError(std::string(what) + " covariance is indefinite");
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& c) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

nlohmann::ordered_json MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["score"] = score;
    j["per_frame"] = per_frame;
    j["params"] = params;
    j["flags"] = flags;
    return j;
}

MetricReport canny_matching(const BinaryVolume& pred, const BinaryVolume& gt) {
    if (!same_dims(pred, gt)) throw DimensionError("canny_matching: edge maps differ in shape");
    check_binary(pred, "predicted edges");
    check_binary(gt, "reference edges");
    if (pred.frames == 0) throw DimensionError("canny_matching: no frames");
    MetricReport r;
    r.name = "canny_matching";
    r.params = {{"epsilon", kDiceEpsilon}, {"frames", pred.frames}};
    const std::size_t n = pred.height * pred.width;
    std::size_t empty_frames = 0;
    double total = 0.0;
    for (std::size_t t = 0; t < pred.frames; ++t) {
        std::size_t inter = 0, np = 0, ng = 0;
        for (std::size_t i = t * n; i < (t + 1) * n; ++i) {
            inter += pred.data[i] & gt.data[i];
            np += pred.data[i];
            ng += gt.data[i];
        }
        if (np == 0 && ng == 0) ++empty_frames;
        const double term = (double(inter) + kDiceEpsilon) / (double(np + ng) + kDiceEpsilon);
        r.per_frame.push_back(term);
        total += term;
    }
    r.score = 2.0 / double(pred.frames) * total;
    if (empty_frames) r.flags.push_back("empty_empty_frames:" + std::to_string(empty_frames));
    return r;
}

MetricReport ms_consistency(const VideoTensor& pred, const VideoTensor& gt, const BinaryVolume& masks) {
    if (!pred.data.same_shape(gt.data)) throw DimensionError("ms_consistency: videos differ in shape");
    if (masks.frames != pred.frames() || masks.height != pred.height() || masks.width != pred.width())
        throw DimensionError("ms_consistency: mask shape differs from video");
    check_binary(masks, "masks");
    MetricReport r;
    r.name = "ms_consistency";
    r.params = {{"norm", "L1"}, {"aggregation", "sum over frames"}, {"direction", "lower is better"}};
    for (std::size_t t = 0; t < pred.frames(); ++t) {
        double num = 0.0, area = 0.0;
        for (std::size_t y = 0; y < pred.height(); ++y)
            for (std::size_t x = 0; x < pred.width(); ++x) {
                if (!masks.at(t, y, x)) continue;
                area += 1.0;
                for (std::size_t c = 0; c < 3; ++c) num += std::abs(pred.data.at(t, y, x, c) - gt.data.at(t, y, x, c));
            }
        if (area == 0.0) throw DegenerateInputError("ms_consistency: mask of frame " + std::to_string(t) + " is empty");
        r.per_frame.push_back(num / area);
        r.score += num / area;
    }
    return r;
}

std::vector<double> coco_sigmas() {
    return {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
            0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
}

MetricReport pose_similarity(const std::vector<KeypointFrame>& pred, const std::vector<KeypointFrame>& gt,
                             const std::vector<double>& sigmas) {
    if (pred.size() != gt.size()) throw DimensionError("pose_similarity: frame counts differ");
    if (gt.empty()) throw DimensionError("pose_similarity: no frames");
    if (sigmas.size() != kKeypointCount) throw ValidationError("pose_similarity needs 17 keypoint sigmas");
    MetricReport r;
    r.name = "pose_similarity";
    r.params = {{"K", kKeypointCount}, {"sigmas", sigmas}};
    double total = 0.0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
        const KeypointFrame &p = pred[t], &g = gt[t];
        if (p.points.size() != kKeypointCount || g.points.size() != kKeypointCount || g.visible.size() != kKeypointCount)
            throw ValidationError("pose_similarity: frame " + std::to_string(t) + " does not have 17 keypoints");
        if (!(g.bbox_area > 0)) throw ValidationError("pose_similarity: non-positive bbox area in frame " + std::to_string(t));
        double sum = 0.0;
        int visible = 0;
        for (std::size_t k = 0; k < kKeypointCount; ++k) {
            if (!g.visible[k]) continue;
            const double dx = p.points[k][0] - g.points[k][0], dy = p.points[k][1] - g.points[k][1];
            sum += std::exp(-(dx * dx + dy * dy) / (2.0 * sigmas[k] * sigmas[k] * g.bbox_area));
            ++visible;
        }
        if (visible == 0) throw DegenerateInputError("pose_similarity: no visible keypoints in frame " + std::to_string(t));
        r.per_frame.push_back(sum / visible);
        total += sum / visible;
    }
    r.score = total / double(gt.size());
    return r;
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& f) {
    if (f.rows() < 2) throw DegenerateInputError("need at least two feature rows for a covariance");
    GaussianStats s;
    s.mean = f.colwise().mean().transpose();
    const Eigen::MatrixXd c = f.rowwise() - s.mean.transpose();
    s.cov = c.transpose() * c / double(f.rows() - 1);
    return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size())
        throw DimensionError("frechet_distance: dimension mismatch");
    check_covariance(a.cov, "first");
    check_covariance(b.cov, "second");
    const Eigen::MatrixXd ra = psd_sqrt(a.cov);
    const Eigen::MatrixXd m = ra * b.cov * ra;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_root;
}

Eigen::VectorXd toy_features(const VideoTensor& v) {
    const std::size_t F = v.frames(), H = v.height(), W = v.width();
    if (F == 0 || H < 2 || W < 2) throw DimensionError("toy_features needs at least 1 frame of 2x2");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(kToyFeatureDim);
    const double n = double(F * H * W);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        for (std::size_t t = 0; t < F; ++t)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const double val = v.data.at(t, y, x, c);
                    s += val;
                    s2 += val * val;
                }
        f[Eigen::Index(c)] = s / n;
        f[Eigen::Index(3 + c)] = std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
    }
    std::vector<Image> gray;
    for (std::size_t t = 0; t < F; ++t) gray.push_back(grayscale_frame(v, t));
    double diff = 0;
    for (std::size_t t = 1; t < F; ++t)
        for (std::size_t i = 0; i < H * W; ++i) diff += std::abs(gray[t].data[i] - gray[t - 1].data[i]);
    f[6] = F > 1 ? diff / double((F - 1) * H * W) : 0.0;
    double grad = 0;
    for (const Image& g : gray)
        for (std::size_t y = 0; y + 1 < H; ++y)
            for (std::size_t x = 0; x + 1 < W; ++x)
                grad += std::hypot(g.at(y, x + 1) - g.at(y, x), g.at(y + 1, x) - g.at(y, x));
    f[7] = grad / double(F * (H - 1) * (W - 1));
    for (std::size_t t = 0; t < F; ++t) {
        const std::size_t half = F > 1 && t >= (F + 1) / 2 ? 1 : 0;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t cell = half * 4 + (y * 2 / H) * 2 + (x * 2 / W);
                f[Eigen::Index(8 + cell)] += gray[t].at(y, x);
            }
    }
    const std::size_t first = F > 1 ? (F + 1) / 2 : F;
    for (std::size_t cell = 0; cell < 8; ++cell) {
        const std::size_t frames = cell < 4 ? first : F - first;
        const std::size_t rows = (cell % 4) / 2 == 0 ? (H + 1) / 2 : H / 2;
        const std::size_t cols = cell % 2 == 0 ? (W + 1) / 2 : W / 2;
        const double count = double(frames * rows * cols);
        f[Eigen::Index(8 + cell)] = count > 0 ? f[Eigen::Index(8 + cell)] / count : 0.0;
    }
    return f;
}

double frechet_video_distance(const std::vector<VideoTensor>& a, const std::vector<VideoTensor>& b) {
    auto stack = [](const std::vector<VideoTensor>& vs) {
        Eigen::MatrixXd m(Eigen::Index(vs.size()), kToyFeatureDim);
        for (std::size_t i = 0; i < vs.size(); ++i) m.row(Eigen::Index(i)) = toy_features(vs[i]).transpose();
        return m;
    };
    return frechet_distance(gaussian_stats(stack(a)), gaussian_stats(stack(b)));
}

}  // namespace vctrl
