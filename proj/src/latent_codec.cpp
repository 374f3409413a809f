#include "vctrl/latent_codec.hpp"

#include <algorithm>
#include <string>

#include "vctrl/error.hpp"

namespace vctrl {

namespace {

void require_divisible(std::size_t extent, int patch, const char* axis) {
    if (patch < 1) throw ParameterError(std::string("patch size for axis ") + axis + " must be positive");
    if (extent % static_cast<std::size_t>(patch) != 0) {
        throw DimensionError(std::string("axis ") + axis + " of extent " + std::to_string(extent) +
                             " is not divisible by patch size " + std::to_string(patch));
    }
}

}  // namespace

Image grayscale_frame(const VideoTensor& video, std::size_t t) {
    const auto& v = video.data;
    Image out(v.dims[1], v.dims[2]);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            out.at(y, x) = 0.299 * v.at(t, y, x, 0) + 0.587 * v.at(t, y, x, 1) + 0.114 * v.at(t, y, x, 2);
        }
    }
    return out;
}

LatentTensor encode(const VideoTensor& video, PatchSpec patch) {
    const auto& v = video.data;
    if (v.dims[3] != 3) throw DimensionError("video channel axis must have extent 3, got " + std::to_string(v.dims[3]));
    require_divisible(v.dims[0], patch.temporal, "F");
    require_divisible(v.dims[1], patch.spatial, "H");
    require_divisible(v.dims[2], patch.spatial, "W");

    const std::size_t pt = patch.temporal, ps = patch.spatial;
    LatentTensor out;
    out.patch = patch;
    out.data = Tensor4(v.dims[0] / pt, v.dims[1] / ps, v.dims[2] / ps, static_cast<std::size_t>(patch.channels()));
    auto& z = out.data;
    for (std::size_t f = 0; f < z.dims[0]; ++f)
        for (std::size_t h = 0; h < z.dims[1]; ++h)
            for (std::size_t w = 0; w < z.dims[2]; ++w) {
                std::size_t c = 0;
                for (std::size_t dt = 0; dt < pt; ++dt)
                    for (std::size_t dy = 0; dy < ps; ++dy)
                        for (std::size_t dx = 0; dx < ps; ++dx)
                            for (std::size_t k = 0; k < 3; ++k)
                                z.at(f, h, w, c++) = v.at(f * pt + dt, h * ps + dy, w * ps + dx, k);
            }
    return out;
}

VideoTensor decode(const LatentTensor& latent, double fps) {
    const auto& z = latent.data;
    const PatchSpec patch = latent.patch;
    if (patch.temporal < 1 || patch.spatial < 1) throw DimensionError("patch spec must be positive");
    if (z.dims[3] != static_cast<std::size_t>(patch.channels())) {
        throw DimensionError("latent channel axis ch=" + std::to_string(z.dims[3]) + " is inconsistent with patch spec (" +
                             std::to_string(patch.temporal) + "," + std::to_string(patch.spatial) + "), expected " +
                             std::to_string(patch.channels()));
    }
    const std::size_t pt = patch.temporal, ps = patch.spatial;
    VideoTensor out;
    out.fps = fps;
    out.data = Tensor4(z.dims[0] * pt, z.dims[1] * ps, z.dims[2] * ps, 3);
    auto& v = out.data;
    for (std::size_t f = 0; f < z.dims[0]; ++f)
        for (std::size_t h = 0; h < z.dims[1]; ++h)
            for (std::size_t w = 0; w < z.dims[2]; ++w) {
                std::size_t c = 0;
                for (std::size_t dt = 0; dt < pt; ++dt)
                    for (std::size_t dy = 0; dy < ps; ++dy)
                        for (std::size_t dx = 0; dx < ps; ++dx)
                            for (std::size_t k = 0; k < 3; ++k)
                                v.at(f * pt + dt, h * ps + dy, w * ps + dx, k) = std::clamp(z.at(f, h, w, c++), 0.0, 1.0);
            }
    return out;
}

}  // namespace vctrl
