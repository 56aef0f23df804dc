#pragma once

#include "lmbis/image.hpp"
#include "lmbis/tensor.hpp"

namespace lmbis {

// Direct (non-aspect-preserving) rescale. Pixel-center convention:
// src = (dst + 0.5) * (src_dim / dst_dim) - 0.5, clamped to the frame.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);
Mask resize_nearest(const Mask& mask, int out_h, int out_w);

// Rotation about the image center, positive degrees counterclockwise.
// Out-of-canvas samples are 0. Degrees must be a multiple of 10 in [-90, 90].
Tensor rotate_bilinear(const Tensor& image, int degrees);
Mask rotate_nearest(const Mask& mask, int degrees);

// Mean-centered linear contrast per channel:
// x' = clamp(mu_c + factor * (x - mu_c), 0, 1).
Tensor contrast_adjust(const Tensor& image, float factor);

// Fallback FOV when a dataset ships no masks: the largest connected component
// of pixels with luminance > 0.06, morphologically closed with a 5-pixel
// disc. Full frame if the component covers under 30% of the image.
Mask make_fov(const Tensor& image);

}  // namespace lmbis
