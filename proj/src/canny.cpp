#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "vctrl/control_extractors.hpp"
#include "vctrl/error.hpp"

namespace vctrl {

namespace {

std::size_t clamp_index(long i, std::size_t n) {
    if (i < 0) return 0;
    if (i >= static_cast<long>(n)) return n - 1;
    return static_cast<std::size_t>(i);
}

// Replicate-padded read.
double pixel(const Image& im, long y, long x) {
    return im.at(clamp_index(y, im.height), clamp_index(x, im.width));
}

Image blur(const Image& frame, const std::vector<double>& kernel) {
    const long r = static_cast<long>(kernel.size() / 2);
    Image tmp(frame.height, frame.width), out(frame.height, frame.width);
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x) {
            double s = 0.0;
            for (long k = -r; k <= r; ++k) s += kernel[k + r] * pixel(frame, long(y), long(x) + k);
            tmp.at(y, x) = s;
        }
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x) {
            double s = 0.0;
            for (long k = -r; k <= r; ++k) s += kernel[k + r] * pixel(tmp, long(y) + k, long(x));
            out.at(y, x) = s;
        }
    return out;
}

std::uint8_t quantize(double gx, double gy) {
    double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
    if (deg < 0) deg += 180.0;
    if (deg >= 180.0) deg -= 180.0;
    if (deg < 22.5 || deg >= 157.5) return 0;
    if (deg < 67.5) return 1;
    if (deg < 112.5) return 2;
    return 3;
}

}  // namespace

std::size_t BinaryImage::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0)) throw ParameterError("sigma must be positive");
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double total = 0.0;
    for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= total;
    return k;
}

std::pair<int, int> direction_step(std::uint8_t direction) {
    // image rows grow downward, so a 45 degree gradient points to (+x, +y)
    switch (direction) {
        case 0: return {0, 1};
        case 1: return {1, 1};
        case 2: return {1, 0};
        default: return {1, -1};
    }
}

CannyStages canny_stages(const Image& frame, double sigma) {
    if (frame.height < 3 || frame.width < 3)
        throw ParameterError("canny needs a frame of at least 3x3, got " + std::to_string(frame.height) + "x" +
                             std::to_string(frame.width));
    const std::size_t H = frame.height, W = frame.width;
    CannyStages s;
    s.blurred = blur(frame, gaussian_kernel(sigma));
    s.gx = Image(H, W);
    s.gy = Image(H, W);
    s.magnitude = Image(H, W);
    s.direction.assign(H * W, 0);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const long Y = long(y), X = long(x);
            auto p = [&](long dy, long dx) { return pixel(s.blurred, Y + dy, X + dx); };
            const double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            const double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            s.gx.at(y, x) = gx;
            s.gy.at(y, x) = gy;
            s.magnitude.at(y, x) = std::hypot(gx, gy);
            s.direction[y * W + x] = quantize(gx, gy);
        }

    s.suppressed = Image(H, W);
    auto mag = [&](long y, long x) {
        if (y < 0 || x < 0 || y >= long(H) || x >= long(W)) return 0.0;
        return s.magnitude.at(std::size_t(y), std::size_t(x));
    };
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double m = s.magnitude.at(y, x);
            if (m <= 0) continue;
            const auto [dy, dx] = direction_step(s.direction[y * W + x]);
            // strict on one side, non-strict on the other so plateaus keep exactly one pixel
            if (m > mag(long(y) - dy, long(x) - dx) && m >= mag(long(y) + dy, long(x) + dx)) s.suppressed.at(y, x) = m;
        }
    return s;
}

BinaryImage canny_edges(const Image& frame, double low, double high, double sigma) {
    if (!(low >= 0) || !(high >= low)) throw ParameterError("canny thresholds need 0 <= low <= high");
    const CannyStages s = canny_stages(frame, sigma);
    const std::size_t H = frame.height, W = frame.width;
    BinaryImage edges(H, W);
    std::deque<std::pair<std::size_t, std::size_t>> queue;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            if (s.suppressed.at(y, x) > 0 && s.suppressed.at(y, x) >= high) {
                edges.at(y, x) = 1;
                queue.emplace_back(y, x);
            }
    while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                const long ny = long(y) + dy, nx = long(x) + dx;
                if (ny < 0 || nx < 0 || ny >= long(H) || nx >= long(W)) continue;
                const double m = s.suppressed.at(std::size_t(ny), std::size_t(nx));
                if (m > 0 && m >= low && !edges.at(std::size_t(ny), std::size_t(nx))) {
                    edges.at(std::size_t(ny), std::size_t(nx)) = 1;
                    queue.emplace_back(std::size_t(ny), std::size_t(nx));
                }
            }
    }
    return edges;
}

BinaryVolume canny_volume(const VideoTensor& video, const CannyThresholds& th) {
    BinaryVolume out(video.frames(), video.height(), video.width());
    for (std::size_t t = 0; t < video.frames(); ++t) {
        const BinaryImage e = canny_edges(grayscale_frame(video, t), th.low, th.high, th.sigma);
        std::copy(e.data.begin(), e.data.end(), out.data.begin() + t * e.data.size());
    }
    return out;
}

}  // namespace vctrl
