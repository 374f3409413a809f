#include <algorithm>
#include <bit>
#include <cmath>

#include "vctrl/control_extractors.hpp"
#include "vctrl/error.hpp"

namespace vctrl {

namespace {

// Area bins with the floor/ceil rule, so small frames still give 8 cells.
std::pair<std::size_t, std::size_t> bin(std::size_t j, std::size_t n, std::size_t cells) {
    return {j * n / cells, ((j + 1) * n + cells - 1) / cells};
}

struct Stats {
    double mean, std;
};

// Moments of a 16-bin histogram, taken at bin centers.
Stats histogram_stats(const std::array<std::size_t, 16>& hist) {
    double n = 0, s = 0, s2 = 0;
    for (std::size_t b = 0; b < 16; ++b) {
        const double c = (double(b) + 0.5) / 16.0;
        n += double(hist[b]);
        s += double(hist[b]) * c;
        s2 += double(hist[b]) * c * c;
    }
    const double mean = s / n;
    return {mean, std::sqrt(std::max(0.0, s2 / n - mean * mean))};
}

std::size_t histogram_bin(double v) {
    const double b = std::floor(v * 16.0);
    return b < 0 ? 0 : b > 15 ? 15 : std::size_t(b);
}

}  // namespace

std::uint64_t average_hash(const Image& frame) {
    std::array<double, 64> cells{};
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const auto [y0, y1] = bin(i, frame.height, 8);
            const auto [x0, x1] = bin(j, frame.width, 8);
            double s = 0;
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) s += frame.at(y, x);
            cells[i * 8 + j] = s / double((y1 - y0) * (x1 - x0));
        }
    double mean = 0;
    for (double c : cells) mean += c;
    mean /= 64.0;
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < 64; ++i)
        if (cells[i] > mean) h |= std::uint64_t{1} << i;
    return h;
}

int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

std::vector<FrameRange> segment_scenes(const VideoTensor& video, int hamming_threshold) {
    if (hamming_threshold < 0 || hamming_threshold > 64) throw ParameterError("hamming threshold must be in [0, 64]");
    std::vector<FrameRange> out;
    const std::size_t F = video.frames();
    if (F == 0) return out;
    std::size_t start = 0;
    std::uint64_t prev = average_hash(grayscale_frame(video, 0));
    for (std::size_t t = 1; t < F; ++t) {
        const std::uint64_t h = average_hash(grayscale_frame(video, t));
        if (hamming_distance(prev, h) > hamming_threshold) {
            out.emplace_back(start, t);
            start = t;
        }
        prev = h;
    }
    out.emplace_back(start, F);
    return out;
}

CropBox detect_borders(const VideoTensor& video, double std_threshold) {
    if (!(std_threshold >= 0)) throw ParameterError("std threshold must be non-negative");
    const std::size_t F = video.frames(), H = video.height(), W = video.width();
    std::vector<Image> gray;
    for (std::size_t t = 0; t < F; ++t) gray.push_back(grayscale_frame(video, t));

    auto is_border = [&](bool row, std::size_t idx, std::size_t lo, std::size_t hi) {
        std::array<std::size_t, 16> hist{};
        for (const Image& g : gray)
            for (std::size_t k = lo; k < hi; ++k) ++hist[histogram_bin(row ? g.at(idx, k) : g.at(k, idx))];
        const Stats s = histogram_stats(hist);
        return s.std < std_threshold && s.mean < 0.1;
    };

    CropBox box{0, H, 0, W};
    while (box.top < H && is_border(true, box.top, 0, W)) ++box.top;
    if (box.top == H) throw DegenerateInputError("every row is border");
    while (box.bottom > box.top && is_border(true, box.bottom - 1, 0, W)) --box.bottom;
    // columns are judged over the rows that survive the row crop
    while (box.left < W && is_border(false, box.left, box.top, box.bottom)) ++box.left;
    if (box.left == W) throw DegenerateInputError("every column is border");
    while (box.right > box.left && is_border(false, box.right - 1, box.top, box.bottom)) --box.right;
    return box;
}

VideoTensor apply_crop(const VideoTensor& video, const CropBox& box) {
    if (box.top >= box.bottom || box.left >= box.right || box.bottom > video.height() || box.right > video.width())
        throw DimensionError("crop box outside frame");
    const std::size_t h = box.bottom - box.top, w = box.right - box.left;
    VideoTensor out{Tensor4(video.frames(), h, w, 3), video.fps};
    for (std::size_t t = 0; t < video.frames(); ++t)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < 3; ++c) out.data.at(t, y, x, c) = video.data.at(t, y + box.top, x + box.left, c);
    return out;
}

BinaryVolume apply_crop(const BinaryVolume& volume, const CropBox& box) {
    if (box.top >= box.bottom || box.left >= box.right || box.bottom > volume.height || box.right > volume.width)
        throw DimensionError("crop box outside frame");
    BinaryVolume out(volume.frames, box.bottom - box.top, box.right - box.left);
    for (std::size_t t = 0; t < volume.frames; ++t)
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x) out.at(t, y, x) = volume.at(t, y + box.top, x + box.left);
    return out;
}

}  // namespace vctrl
