#pragma once

#include "vctrl/tensor.hpp"

namespace vctrl {

// Exact space-to-channel patch folding standing in for a pretrained VAE.
// Channel layout within a latent cell is row-major over (p_t, p_s, p_s, rgb).
LatentTensor encode(const VideoTensor& video, PatchSpec patch = {});

// Inverse of encode. Values are clamped to [0,1], which is a no-op for
// codec-produced latents.
VideoTensor decode(const LatentTensor& latent, double fps = 8.0);

}  // namespace vctrl
