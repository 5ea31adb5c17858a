#pragma once

#include <filesystem>

#include "veil/tensor.hpp"

namespace veil {

/// Reads an 8-bit PNG into a [3,H,W] tensor with values in [0,1]; grayscale
/// and alpha inputs are expanded/dropped to RGB.
Tensor read_png(const std::filesystem::path& path);

/// Writes a [3,H,W] tensor with values in [0,1] as an 8-bit RGB PNG,
/// rounding to the nearest of 256 levels. Byte-stable for identical tensors.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resample of a [C,H,W] tensor to [C,out_h,out_w] using
/// half-pixel-centered source coordinates.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

}  // namespace veil
