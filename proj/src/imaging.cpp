#include "puzzlegan/imaging.hpp"

#include <algorithm>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "puzzlegan/errors.hpp"

namespace puzzlegan {

namespace {

cv::Mat to_mat(const torch::Tensor& image) {
  auto bytes = to_uint8(image).contiguous();
  if (bytes.dim() == 2) {
    cv::Mat gray(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1, bytes.data_ptr<std::uint8_t>());
    return gray.clone();
  }
  if (bytes.dim() != 3 || bytes.size(0) != 3) {
    throw ValidationError("expected a [3, H, W] image, got " + c10::str(image.sizes()));
  }
  auto hwc = bytes.permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

void write_mat(const std::string& path, const cv::Mat& mat) {
  if (!cv::imwrite(path, mat)) throw ValidationError("cannot write image " + path);
}

}  // namespace

torch::Tensor to_uint8(const torch::Tensor& image) {
  return ((image.detach().to(torch::kFloat32) + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8);
}

void write_png(const std::string& path, const torch::Tensor& image) { write_mat(path, to_mat(image)); }

void write_image_grid(const std::string& path, const torch::Tensor& images, std::int64_t columns, std::int64_t pad) {
  if (images.dim() != 4 || images.size(0) == 0) {
    throw ValidationError("expected a non-empty [N, 3, H, W] batch, got " + c10::str(images.sizes()));
  }
  const auto n = images.size(0);
  const auto h = images.size(2);
  const auto w = images.size(3);
  columns = std::clamp<std::int64_t>(columns, 1, n);
  const auto rows = (n + columns - 1) / columns;
  auto canvas = torch::zeros({images.size(1), rows * h + (rows + 1) * pad, columns * w + (columns + 1) * pad});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r = i / columns;
    const auto c = i % columns;
    const auto top = pad + r * (h + pad);
    const auto left = pad + c * (w + pad);
    canvas.slice(1, top, top + h).slice(2, left, left + w).copy_(images[i]);
  }
  write_png(path, canvas);
}

void write_gray_png(const std::string& path, std::span<const double> values, int height, int width, double max_value) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("gray image needs " + std::to_string(height * width) + " values");
  }
  if (max_value <= 0.0) {
    max_value = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  }
  cv::Mat gray(height, width, CV_8UC1);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double v = max_value > 0.0 ? values[static_cast<std::size_t>(r) * width + c] * 255.0 / max_value : 0.0;
      gray.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
    }
  }
  write_mat(path, gray);
}

}  // namespace puzzlegan
