#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "vctrl/control_extractors.hpp"
#include "vctrl/error.hpp"

namespace vctrl {

namespace {

using Vec2 = std::array<double, 2>;

// Stick figure layout in units of size/16, COCO keypoint order, y down.
constexpr std::array<Vec2, kKeypointCount> kStickOffsets{{
    {0, -7},    {-1, -8},  {1, -8},   {-2, -7.5}, {2, -7.5}, {-3, -4}, {3, -4},  {-5, -1}, {5, -1},
    {-6, 2},    {6, 2},    {-2, 1},   {2, 1},     {-2, 5},   {2, 5},   {-2, 8},  {2, 8},
}};

constexpr std::array<std::pair<int, int>, 12> kLimbs{{
    {5, 6}, {5, 7}, {7, 9}, {6, 8}, {8, 10}, {5, 11}, {6, 12}, {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16},
}};

constexpr double kLineHalfWidth = 0.75;

constexpr std::array<std::array<double, 3>, 2> kColors{{{0.95, 0.55, 0.2}, {0.25, 0.8, 0.95}}};

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return n == 0 ? 0 : std::size_t(rng() % n); }

double quarter(double v) { return std::floor(v * 4.0) / 4.0; }

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len2 = dx * dx + dy * dy;
    double u = len2 > 0 ? ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    return std::hypot(p[0] - a[0] - u * dx, p[1] - a[1] - u * dy);
}

// Half extents of the shape's support around its center.
Vec2 extent(const ShapeTrack& s) {
    switch (s.type) {
        case ShapeType::square: return {s.size / 2, s.size / 2};
        case ShapeType::disc: return {s.size, s.size};
        case ShapeType::stick: {
            const double u = s.size / 16.0;
            return {6 * u + kLineHalfWidth, 8.5 * u + kLineHalfWidth};
        }
    }
    return {0, 0};
}

bool covers(const ShapeTrack& s, std::size_t t, Vec2 p) {
    const Vec2 c = s.center(t);
    switch (s.type) {
        case ShapeType::square: return std::abs(p[0] - c[0]) <= s.size / 2 && std::abs(p[1] - c[1]) <= s.size / 2;
        case ShapeType::disc: {
            const double dx = p[0] - c[0], dy = p[1] - c[1];
            return dx * dx + dy * dy <= s.size * s.size;
        }
        case ShapeType::stick: {
            const auto kp = stick_keypoints(s, t);
            const double u = s.size / 16.0;
            if (std::hypot(p[0] - kp[0][0], p[1] - kp[0][1]) <= 1.5 * u + kLineHalfWidth) return true;
            const Vec2 neck{(kp[5][0] + kp[6][0]) / 2, (kp[5][1] + kp[6][1]) / 2};
            if (segment_distance(p, neck, kp[0]) <= kLineHalfWidth) return true;
            for (auto [a, b] : kLimbs)
                if (segment_distance(p, kp[std::size_t(a)], kp[std::size_t(b)]) <= kLineHalfWidth) return true;
            return false;
        }
    }
    return false;
}

// Start position and velocity along one axis keeping [c - margin, c + margin] inside [0, extent].
void place_linear(std::mt19937_64& rng, double length, double margin, std::size_t frames, double& start, double& vel) {
    const double travel = double(frames > 0 ? frames - 1 : 0);
    vel = (double(pick(rng, 9)) - 4.0) * 0.25;
    double lo = margin - std::min(0.0, vel * travel), hi = length - margin - std::max(0.0, vel * travel);
    if (lo > hi) {
        vel = 0;
        lo = margin;
        hi = length - margin;
    }
    if (lo > hi) {
        start = quarter(length / 2);
        return;
    }
    start = lo + 0.25 * double(pick(rng, std::size_t((hi - lo) / 0.25) + 1));
}

ShapeTrack random_track(std::mt19937_64& rng, std::size_t frames, std::size_t height, std::size_t width) {
    ShapeTrack s;
    s.type = static_cast<ShapeType>(pick(rng, 3));
    s.color = int(pick(rng, 2));
    s.motion = static_cast<MotionType>(pick(rng, 2));
    const double m = double(std::min(height, width));
    switch (s.type) {
        case ShapeType::square: s.size = std::max(2.0, quarter(0.375 * m)); break;
        case ShapeType::disc: s.size = std::max(1.5, quarter(0.1875 * m)); break;
        case ShapeType::stick: s.size = std::max(4.0, quarter(0.5 * m)); break;
    }
    const Vec2 ext = extent(s);
    const Vec2 margin{std::ceil(ext[0]) + 1, std::ceil(ext[1]) + 1};
    const Vec2 dims{double(width), double(height)};
    if (s.motion == MotionType::linear) {
        for (int a = 0; a < 2; ++a) place_linear(rng, dims[a], margin[a], frames, s.start[a], s.velocity[a]);
    } else {
        s.radius = std::max(0.0, quarter(0.15 * m));
        for (int a = 0; a < 2; ++a) s.radius = std::min(s.radius, std::max(0.0, quarter((dims[a] - 2 * margin[a]) / 2)));
        for (int a = 0; a < 2; ++a) {
            const double lo = margin[a] + s.radius, hi = dims[a] - margin[a] - s.radius;
            s.pivot[a] = lo > hi ? quarter(dims[a] / 2) : lo + 0.25 * double(pick(rng, std::size_t((hi - lo) / 0.25) + 1));
        }
        const double dir = pick(rng, 2) ? 1.0 : -1.0;
        s.omega = dir * 2.0 * std::numbers::pi / double(std::max<std::size_t>(frames, 2));
        s.phase = double(pick(rng, 8)) * std::numbers::pi / 4.0;
    }
    return s;
}

}  // namespace

std::array<double, 2> ShapeTrack::center(std::size_t t) const {
    const double tt = double(t);
    if (motion == MotionType::linear) return {start[0] + velocity[0] * tt, start[1] + velocity[1] * tt};
    return {pivot[0] + radius * std::cos(omega * tt + phase), pivot[1] + radius * std::sin(omega * tt + phase)};
}

int caption_class(ShapeType shape, int color, MotionType motion) {
    return (int(shape) * 2 + color) * 2 + int(motion);
}

std::vector<std::array<double, 2>> stick_keypoints(const ShapeTrack& track, std::size_t t) {
    const Vec2 c = track.center(t);
    const double u = track.size / 16.0;
    std::vector<Vec2> out(kKeypointCount);
    for (std::size_t k = 0; k < kKeypointCount; ++k)
        out[k] = {c[0] + kStickOffsets[k][0] * u, c[1] + kStickOffsets[k][1] * u};
    return out;
}

ClipRecord synth_clip(std::size_t frames, std::size_t height, std::size_t width, std::uint64_t seed,
                      const CannyThresholds& canny) {
    if (frames == 0 || height < 3 || width < 3) throw DimensionError("synthetic clips need F >= 1 and H, W >= 3");
    std::mt19937_64 rng(seed);
    ClipRecord clip;
    clip.seed = seed;
    clip.canny = canny;
    for (double& b : clip.background) b = 0.16 + 0.02 * double(pick(rng, 6));
    const double fx = double(1 + pick(rng, 2)), fy = double(pick(rng, 2));
    const double tex_phase = double(pick(rng, 8)) * std::numbers::pi / 4.0;

    const std::size_t count = pick(rng, 4) == 0 ? 2 : 1;
    for (std::size_t i = 0; i < count; ++i) clip.shapes.push_back(random_track(rng, frames, height, width));
    const ShapeTrack& lead = clip.shapes.front();
    clip.caption_class = caption_class(lead.type, lead.color, lead.motion);

    clip.video = VideoTensor{Tensor4(frames, height, width, 3), 8.0};
    clip.masks = BinaryVolume(frames, height, width);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const Vec2 p{double(x) + 0.5, double(y) + 0.5};
                const double tex = 0.03 * std::sin(2 * std::numbers::pi * (fx * p[0] / double(width) + fy * p[1] / double(height)) + tex_phase);
                std::array<double, 3> rgb;
                for (std::size_t c = 0; c < 3; ++c) rgb[c] = clip.background[c] + tex;
                for (const ShapeTrack& s : clip.shapes)
                    if (covers(s, t, p)) {
                        rgb = kColors[std::size_t(s.color)];
                        clip.masks.at(t, y, x) = 1;
                    }
                for (std::size_t c = 0; c < 3; ++c) clip.video.data.at(t, y, x, c) = double(float(rgb[c]));
            }
    clip.edges = canny_volume(clip.video, canny);

    const auto stick = std::find_if(clip.shapes.begin(), clip.shapes.end(),
                                    [](const ShapeTrack& s) { return s.type == ShapeType::stick; });
    if (stick != clip.shapes.end()) {
        for (std::size_t t = 0; t < frames; ++t) {
            KeypointFrame kf;
            kf.points = stick_keypoints(*stick, t);
            double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
            for (const Vec2& q : kf.points) {
                const bool vis = q[0] >= 0 && q[1] >= 0 && q[0] < double(width) && q[1] < double(height);
                kf.visible.push_back(vis);
                if (!vis) continue;
                x0 = std::min(x0, q[0]);
                x1 = std::max(x1, q[0]);
                y0 = std::min(y0, q[1]);
                y1 = std::max(y1, q[1]);
            }
            kf.bbox_area = x1 > x0 && y1 > y0 ? std::max(1.0, (x1 - x0) * (y1 - y0)) : 1.0;
            clip.keypoints.push_back(std::move(kf));
        }
    }
    return clip;
}

std::vector<ClipRecord> synth_dataset(std::size_t n_clips, std::size_t frames, std::size_t height, std::size_t width,
                                      std::uint64_t seed, const CannyThresholds& canny) {
    std::vector<ClipRecord> out;
    out.reserve(n_clips);
    std::mt19937_64 seeds(seed);
    for (std::size_t i = 0; i < n_clips; ++i) out.push_back(synth_clip(frames, height, width, seeds(), canny));
    return out;
}

std::vector<ClipFilter> default_filters() {
    auto keep_all = [](const ClipRecord&) { return true; };
    return {{"aesthetic", keep_all}, {"caption_score", keep_all}};
}

}  // namespace vctrl
