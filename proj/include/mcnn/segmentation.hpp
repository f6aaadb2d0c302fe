#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

// Per-pixel segment ids 0..count-1 over a row-major height x width grid;
// every id owns at least one pixel.
struct SegmentMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t count = 0;
  std::vector<std::size_t> ids;

  std::size_t at(std::size_t x, std::size_t y) const { return ids[y * width + x]; }
  std::vector<std::vector<std::size_t>> members() const;
  // CRC-32 of the dimensions and ids, as 8 hex digits.
  std::string digest() const;
  // Throws InvalidArgument if ids are out of range or some id is unused.
  void validate() const;
};

enum class SegmentMethod { kGrid, kSlic };

SegmentMethod parse_segment_method(const std::string& text);

struct SegmentParams {
  SegmentMethod method = SegmentMethod::kGrid;
  std::size_t grid_cells = 7;        // grid: cells per side
  std::size_t target_segments = 50;  // slic
  double compactness = 0.2;          // slic: spatial weight relative to [0,1] colour distance
  std::size_t iterations = 10;       // slic
};

// g x g tiles; tile boundaries at floor(k * extent / g).
SegmentMap grid_segments(std::size_t width, std::size_t height, std::size_t cells_per_side);

// image: [H,W,3] in [0,1].
SegmentMap segment_image(const Tensor& image, const SegmentParams& params);

}  // namespace mcnn
