#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vctrl/tensor.hpp"

namespace vctrl {

struct BinaryImage {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> data;

    BinaryImage() = default;
    BinaryImage(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
    std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    std::size_t count() const;
    bool operator==(const BinaryImage&) const = default;
};

// ---- Canny -----------------------------------------------------------------

struct CannyThresholds {
    double low = 0.3;
    double high = 0.6;
    double sigma = 1.0;
};

// Intermediate products, exposed for tests.
struct CannyStages {
    Image blurred, gx, gy, magnitude;
    std::vector<std::uint8_t> direction;  // 0: 0deg, 1: 45deg, 2: 90deg, 3: 135deg
    Image suppressed;                     // magnitude after non-maximum suppression
};

// Gaussian kernel of radius ceil(3 sigma), normalized to sum 1.
std::vector<double> gaussian_kernel(double sigma);
CannyStages canny_stages(const Image& frame, double sigma);
// Gradient-step offsets (dy, dx) for a quantized direction.
std::pair<int, int> direction_step(std::uint8_t direction);

// Gaussian blur, Sobel, 4-direction NMS, double threshold, then hysteresis by
// 8-connected flood from strong pixels. Thresholds apply to the raw Sobel
// magnitude of a [0,1] image.
BinaryImage canny_edges(const Image& frame, double low, double high, double sigma = 1.0);
BinaryVolume canny_volume(const VideoTensor& video, const CannyThresholds& thresholds);

// ---- scene segmentation / borders --------------------------------------------

// 8x8 area-averaged grayscale, bit i set iff cell i > mean. Bit order is row-major.
std::uint64_t average_hash(const Image& frame);
int hamming_distance(std::uint64_t a, std::uint64_t b);

using FrameRange = std::pair<std::size_t, std::size_t>;  // [start, end)

// Cut between t and t+1 iff the aHash distance exceeds the threshold.
std::vector<FrameRange> segment_scenes(const VideoTensor& video, int hamming_threshold = 16);

struct CropBox {
    std::size_t top = 0, bottom = 0, left = 0, right = 0;  // rows [top,bottom), cols [left,right)
    bool operator==(const CropBox&) const = default;
};

// A boundary row/column is border iff its 16-bin grayscale histogram, pooled
// over all frames, has standard deviation < std_threshold and mean < 0.1.
CropBox detect_borders(const VideoTensor& video, double std_threshold = 0.05);
VideoTensor apply_crop(const VideoTensor& video, const CropBox& box);
BinaryVolume apply_crop(const BinaryVolume& volume, const CropBox& box);

// ---- synthetic data -------------------------------------------------------------

constexpr std::size_t kKeypointCount = 17;

struct KeypointFrame {
    std::vector<std::array<double, 2>> points;  // (x, y) in pixels
    std::vector<bool> visible;
    double bbox_area = 1.0;
};

enum class ShapeType { square, disc, stick };
enum class MotionType { linear, circular };

struct ShapeTrack {
    ShapeType type = ShapeType::square;
    int color = 0;
    MotionType motion = MotionType::linear;
    double size = 4.0;  // square side, disc radius, or stick unit length * 8
    // linear: center(t) = start + velocity * t
    std::array<double, 2> start{0, 0};
    std::array<double, 2> velocity{0, 0};
    // circular: center(t) = pivot + radius * (cos(omega t + phase), sin(omega t + phase))
    std::array<double, 2> pivot{0, 0};
    double radius = 0, omega = 0, phase = 0;

    std::array<double, 2> center(std::size_t t) const;
};

struct ClipRecord {
    VideoTensor video;
    int caption_class = 0;
    BinaryVolume edges;
    BinaryVolume masks;
    std::vector<KeypointFrame> keypoints;  // one per frame for stick-figure clips, else empty
    std::vector<ShapeTrack> shapes;
    std::array<double, 3> background{0, 0, 0};
    CannyThresholds canny;
    std::uint64_t seed = 0;
};

constexpr int kCaptionClasses = 12;
int caption_class(ShapeType shape, int color, MotionType motion);

// Stick figure keypoints at a given center, in COCO order.
std::vector<std::array<double, 2>> stick_keypoints(const ShapeTrack& track, std::size_t t);

// 1-2 moving shapes on a low-contrast textured background with exact masks,
// Canny edges of the rendered frames and analytic stick-figure keypoints.
std::vector<ClipRecord> synth_dataset(std::size_t n_clips, std::size_t frames, std::size_t height, std::size_t width,
                                      std::uint64_t seed, const CannyThresholds& canny = {});
ClipRecord synth_clip(std::size_t frames, std::size_t height, std::size_t width, std::uint64_t seed,
                      const CannyThresholds& canny = {});

// Pipeline filter slot; aesthetic and caption-score filters are identity here.
struct ClipFilter {
    std::string name;
    std::function<bool(const ClipRecord&)> keep;
};
std::vector<ClipFilter> default_filters();

// ---- dataset directory layout ----------------------------------------------------

nlohmann::ordered_json keypoints_to_json(const std::vector<KeypointFrame>& frames);
std::vector<KeypointFrame> keypoints_from_json(const nlohmann::json& j);

// <dir>/video.vclt, edges.vclt, masks.vclt, keypoints.json, meta.json
void write_clip(const std::filesystem::path& dir, const ClipRecord& clip);
ClipRecord read_clip(const std::filesystem::path& dir);

}  // namespace vctrl
