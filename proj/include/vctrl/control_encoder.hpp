#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vctrl/tensor.hpp"

namespace vctrl {

enum class ControlKind { canny, mask, pose };

std::string to_string(ControlKind kind);
ControlKind control_kind_from_string(const std::string& name);

struct ControlVideo {
    VideoTensor video;  // F x H x W x 3 in [0,1]
    ControlKind kind = ControlKind::canny;
};

// Binary f x h x w mask on the latent grid.
struct TaskMask {
    BinaryVolume cells;
};

// z_m: f x h x w x (ch+1); the last channel is the task mask.
struct ControlBundle {
    Tensor4 z_m;
    PatchSpec patch;
};

struct VideoShape {
    std::size_t frames = 0, height = 0, width = 0;
};

// canny/pose: a latent frame is 1 everywhere iff any of its p_t source frames
// is conditioned. mask: seg_masks max-pooled onto the latent grid.
TaskMask build_task_mask(ControlKind kind, VideoShape shape, PatchSpec patch,
                         const std::optional<std::vector<bool>>& conditioned_frames,
                         const std::optional<BinaryVolume>& seg_masks);

ControlBundle encode_control(const ControlVideo& control, const TaskMask& mask, PatchSpec patch);

// {0,1} volume replicated over three channels.
ControlVideo control_video_from_binary(const BinaryVolume& volume, ControlKind kind);

}  // namespace vctrl
