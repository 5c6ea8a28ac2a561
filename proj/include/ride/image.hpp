#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "ride/tensor.hpp"

namespace ride {

/// Grayscale image with values in [0, 1], row-major.
///
/// Continuous coordinates put the center of pixel (row r, col c) at
/// (x, y) = (c + 0.5, r + 0.5); the image covers [0, W] x [0, H].
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::int64_t h, std::int64_t w, float value = 0.0f);

  [[nodiscard]] float at(std::int64_t r, std::int64_t c) const { return pixels[static_cast<std::size_t>(r * width + c)]; }
  float& at(std::int64_t r, std::int64_t c) { return pixels[static_cast<std::size_t>(r * width + c)]; }
  [[nodiscard]] bool empty() const { return pixels.empty(); }

  /// [1, 1, H, W] tensor.
  [[nodiscard]] Tensor to_tensor(DType dtype = DType::f32) const;
  [[nodiscard]] Image crop(std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) const;
};

/// Box-filter downsampling by an integer factor (trailing rows/cols dropped).
Image downsample(const Image& image, int factor);

/// Stacks equally sized images into a [B, 1, H, W] tensor.
Tensor images_to_batch(const std::vector<const Image*>& images, DType dtype = DType::f32);

/// Bilinear sample at continuous (x, y). Points outside the image area read `fill`.
float sample_bilinear(const Image& image, double x, double y, float fill);

/// Resamples `source` into an out_h x out_w canvas: out(p) = source(H^-1 p),
/// where H maps source coordinates to output coordinates.
Image warp_image(const Image& source, const Eigen::Matrix3d& homography, std::int64_t out_h,
                 std::int64_t out_w, float fill = 0.5f);

/// Reads 8-bit grayscale PGM (P5) or PNG (color is converted to luma).
Image read_image(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& image);
/// PGM and PNG files in `dir`, sorted lexicographically.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace ride
