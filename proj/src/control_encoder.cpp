#include "vctrl/control_encoder.hpp"

#include "vctrl/error.hpp"
#include "vctrl/latent_codec.hpp"

namespace vctrl {

std::string to_string(ControlKind kind) {
    switch (kind) {
        case ControlKind::canny: return "canny";
        case ControlKind::mask: return "mask";
        case ControlKind::pose: return "pose";
    }
    return "unknown";
}

ControlKind control_kind_from_string(const std::string& name) {
    if (name == "canny") return ControlKind::canny;
    if (name == "mask") return ControlKind::mask;
    if (name == "pose") return ControlKind::pose;
    throw ParameterError("unknown control kind '" + name + "'");
}

TaskMask build_task_mask(ControlKind kind, VideoShape shape, PatchSpec patch,
                         const std::optional<std::vector<bool>>& conditioned_frames,
                         const std::optional<BinaryVolume>& seg_masks) {
    if (kind == ControlKind::mask) {
        if (!seg_masks) throw ParameterError("mask control needs segmentation masks");
        shape = {seg_masks->frames, seg_masks->height, seg_masks->width};
    } else if (!conditioned_frames) {
        throw ParameterError(to_string(kind) + " control needs per-frame conditioning flags");
    }
    const std::size_t pt = static_cast<std::size_t>(patch.temporal), ps = static_cast<std::size_t>(patch.spatial);
    if (shape.frames % pt != 0 || shape.height % ps != 0 || shape.width % ps != 0) {
        throw DimensionError("video shape is not divisible by the patch spec");
    }
    TaskMask out{BinaryVolume(shape.frames / pt, shape.height / ps, shape.width / ps)};
    auto& m = out.cells;

    if (kind == ControlKind::mask) {
        const auto& seg = *seg_masks;
        for (std::size_t f = 0; f < m.frames; ++f)
            for (std::size_t h = 0; h < m.height; ++h)
                for (std::size_t w = 0; w < m.width; ++w) {
                    std::uint8_t any = 0;
                    for (std::size_t dt = 0; dt < pt && !any; ++dt)
                        for (std::size_t dy = 0; dy < ps && !any; ++dy)
                            for (std::size_t dx = 0; dx < ps && !any; ++dx)
                                any = seg.at(f * pt + dt, h * ps + dy, w * ps + dx) ? 1 : 0;
                    m.at(f, h, w) = any;
                }
        return out;
    }

    const auto& flags = *conditioned_frames;
    if (flags.size() != shape.frames) throw DimensionError("conditioning flags length differs from frame count F");
    for (std::size_t f = 0; f < m.frames; ++f) {
        bool any = false;
        for (std::size_t dt = 0; dt < pt; ++dt) any = any || flags[f * pt + dt];
        for (std::size_t h = 0; h < m.height; ++h)
            for (std::size_t w = 0; w < m.width; ++w) m.at(f, h, w) = any ? 1 : 0;
    }
    return out;
}

ControlBundle encode_control(const ControlVideo& control, const TaskMask& mask, PatchSpec patch) {
    const LatentTensor zc = encode(control.video, patch);
    const auto& d = zc.data.dims;
    const auto& m = mask.cells;
    if (m.frames != d[0] || m.height != d[1] || m.width != d[2]) {
        throw DimensionError("task mask grid does not match the control latent grid");
    }
    ControlBundle out;
    out.patch = patch;
    out.z_m = Tensor4(d[0], d[1], d[2], d[3] + 1);
    for (std::size_t f = 0; f < d[0]; ++f)
        for (std::size_t h = 0; h < d[1]; ++h)
            for (std::size_t w = 0; w < d[2]; ++w) {
                for (std::size_t c = 0; c < d[3]; ++c) out.z_m.at(f, h, w, c) = zc.data.at(f, h, w, c);
                out.z_m.at(f, h, w, d[3]) = m.at(f, h, w);
            }
    return out;
}

ControlVideo control_video_from_binary(const BinaryVolume& volume, ControlKind kind) {
    ControlVideo out;
    out.kind = kind;
    out.video.data = Tensor4(volume.frames, volume.height, volume.width, 3);
    for (std::size_t t = 0; t < volume.frames; ++t)
        for (std::size_t y = 0; y < volume.height; ++y)
            for (std::size_t x = 0; x < volume.width; ++x)
                for (std::size_t k = 0; k < 3; ++k) out.video.data.at(t, y, x, k) = volume.at(t, y, x);
    return out;
}

}  // namespace vctrl
