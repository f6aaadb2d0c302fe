#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }
};

// Decodes PNG or JPEG (detected from the file signature). Alpha and
// grayscale inputs are converted to RGB. Throws DataError when undecodable.
RgbImage read_image(const std::filesystem::path& path);

// Writes through a temporary file and rename.
void write_png(const std::filesystem::path& path, const RgbImage& image);

// Bilinear resampling with half-pixel centres; equal sizes are a copy.
// Returns [out_h, out_w, 3] in the 0..255 range.
std::vector<double> resize_bilinear(const RgbImage& image, std::size_t out_w, std::size_t out_h);

// [H,W,3] tensor in [0,1] <-> 8-bit raster (rounded, clamped).
RgbImage to_rgb8(const Tensor& image);
Tensor to_tensor(const RgbImage& image);

// Nearest-neighbour enlargement by an integer factor.
RgbImage upscale(const RgbImage& image, std::size_t factor);

// Places images left to right on a black canvas of the tallest height.
RgbImage hconcat(const std::vector<RgbImage>& images);

}  // namespace mcnn
