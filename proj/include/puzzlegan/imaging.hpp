#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <torch/torch.h>

namespace puzzlegan {

// [3, R, R] or [R, R] tensor in [-1, 1] to 8-bit values: round((x + 1) * 127.5).
torch::Tensor to_uint8(const torch::Tensor& image);

void write_png(const std::string& path, const torch::Tensor& image);

// Tiles [N, 3, R, R] images into rows of `columns`, separated by `pad`
// pixels of mid grey.
void write_image_grid(const std::string& path, const torch::Tensor& images, std::int64_t columns,
                      std::int64_t pad = 2);

// Grayscale PNG of a row-major grid; values are scaled by 255 / max_value
// (max of the data when max_value <= 0) and clamped.
void write_gray_png(const std::string& path, std::span<const double> values, int height, int width,
                    double max_value = 0.0);

}  // namespace puzzlegan
