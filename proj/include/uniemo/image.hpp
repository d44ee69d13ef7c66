#pragma once

#include <filesystem>

#include "uniemo/tensor.hpp"

namespace uniemo {

// Images are H x W x C tensors with values in [0, 1].

/// Reads PNG (.png) or binary/ASCII PNM (.ppm, .pgm, .pnm). Grayscale is
/// expanded to `channels` by replication when channels > 1.
Tensor read_image(const std::filesystem::path& path, std::size_t channels = 3);

/// Writes 8-bit PNG or binary PPM/PGM depending on the extension. Values
/// are clamped to [0, 1] and rounded to the nearest 1/255 step.
void write_image(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resampling with half-pixel centers; equal sizes are an exact copy.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Rows [y0, y1) and columns [x0, x1).
Tensor crop(const Tensor& image, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1);

/// Quantizes to 8 bits and back, i.e. what a lossless 8-bit file stores.
Tensor quantize_8bit(const Tensor& image);

}  // namespace uniemo
