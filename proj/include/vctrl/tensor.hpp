#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace vctrl {

// Dense row-major 4-D array of doubles. Used for videos (F,H,W,3) and
// latents (f,h,w,ch).
struct Tensor4 {
    std::array<std::size_t, 4> dims{0, 0, 0, 0};
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(std::size_t d0, std::size_t d1, std::size_t d2, std::size_t d3, double fill = 0.0)
        : dims{d0, d1, d2, d3}, data(d0 * d1 * d2 * d3, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return ((a * dims[1] + b) * dims[2] + c) * dims[3] + d;
    }
    double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) { return data[index(a, b, c, d)]; }
    double at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const { return data[index(a, b, c, d)]; }

    bool same_shape(const Tensor4& o) const { return dims == o.dims; }
    bool operator==(const Tensor4& o) const = default;
};

struct PatchSpec {
    int temporal = 2;  // p_t
    int spatial = 4;   // p_s

    int channels() const { return 3 * temporal * spatial * spatial; }
    bool operator==(const PatchSpec&) const = default;
};

struct VideoTensor {
    Tensor4 data;  // F x H x W x 3, values in [0,1]
    double fps = 8.0;

    std::size_t frames() const { return data.dims[0]; }
    std::size_t height() const { return data.dims[1]; }
    std::size_t width() const { return data.dims[2]; }
};

struct LatentTensor {
    Tensor4 data;  // f x h x w x ch
    PatchSpec patch;
};

// F x H x W volume of {0,1} flags (edge maps, segmentation masks).
struct BinaryVolume {
    std::size_t frames = 0, height = 0, width = 0;
    std::vector<std::uint8_t> data;

    BinaryVolume() = default;
    BinaryVolume(std::size_t f, std::size_t h, std::size_t w)
        : frames(f), height(h), width(w), data(f * h * w, 0) {}

    std::uint8_t& at(std::size_t t, std::size_t y, std::size_t x) { return data[(t * height + y) * width + x]; }
    std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const { return data[(t * height + y) * width + x]; }
    bool operator==(const BinaryVolume&) const = default;
};

// Single-channel H x W frame.
struct Image {
    std::size_t height = 0, width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

    double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

// Rec.601 luma of frame t.
Image grayscale_frame(const VideoTensor& video, std::size_t t);

}  // namespace vctrl
