#include "mcnn/segmentation.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mcnn/errors.hpp"

namespace mcnn {

namespace {

std::size_t tile_of(std::size_t coord, std::size_t extent, std::size_t tiles) { return coord * tiles / extent; }

SegmentMap tile_partition(std::size_t width, std::size_t height, std::size_t tiles_x, std::size_t tiles_y) {
  SegmentMap map;
  map.width = width;
  map.height = height;
  map.count = tiles_x * tiles_y;
  map.ids.resize(width * height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      map.ids[y * width + x] = tile_of(y, height, tiles_y) * tiles_x + tile_of(x, width, tiles_x);
    }
  }
  return map;
}

// Renumbers ids densely in order of first use by id value; drops empties.
void compact(SegmentMap& map, std::size_t max_id) {
  std::vector<std::size_t> used(max_id, 0);
  for (std::size_t id : map.ids) used[id] = 1;
  std::vector<std::size_t> remap(max_id, 0);
  std::size_t next = 0;
  for (std::size_t id = 0; id < max_id; ++id) {
    if (used[id]) remap[id] = next++;
  }
  for (std::size_t& id : map.ids) id = remap[id];
  map.count = next;
}

SegmentMap slic(const Tensor& image, const SegmentParams& params) {
  const std::size_t height = image.dim(0), width = image.dim(1);
  const std::size_t k = params.target_segments;
  const std::size_t tiles_x = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(k * width) / static_cast<double>(height)))));
  const std::size_t tiles_y = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(k) / static_cast<double>(tiles_x))));
  if (tiles_x > width || tiles_y > height) throw InvalidArgument("slic: too many segments for the image");
  SegmentMap map = tile_partition(width, height, tiles_x, tiles_y);
  const std::size_t clusters = map.count;
  const double step = std::sqrt(static_cast<double>(width * height) / static_cast<double>(clusters));
  const double spatial_weight = (params.compactness / step) * (params.compactness / step);
  const double window = 2.0 * step;
  auto pixels = image.values();

  struct Center {
    double r = 0, g = 0, b = 0, x = 0, y = 0;
    std::size_t size = 0;
  };
  std::vector<Center> centers(clusters);
  for (std::size_t iter = 0; iter < params.iterations; ++iter) {
    std::fill(centers.begin(), centers.end(), Center{});
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t p = y * width + x;
        Center& c = centers[map.ids[p]];
        c.r += pixels[p * 3];
        c.g += pixels[p * 3 + 1];
        c.b += pixels[p * 3 + 2];
        c.x += static_cast<double>(x) + 0.5;
        c.y += static_cast<double>(y) + 0.5;
        ++c.size;
      }
    }
    for (Center& c : centers) {
      if (c.size == 0) continue;
      const double n = static_cast<double>(c.size);
      c.r /= n;
      c.g /= n;
      c.b /= n;
      c.x /= n;
      c.y /= n;
    }
    std::vector<std::size_t> next = map.ids;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t p = y * width + x;
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t id = 0; id < clusters; ++id) {
          const Center& c = centers[id];
          if (c.size == 0 || std::abs(c.x - px) > window || std::abs(c.y - py) > window) continue;
          const double dr = pixels[p * 3] - c.r, dg = pixels[p * 3 + 1] - c.g, db = pixels[p * 3 + 2] - c.b;
          const double dx = px - c.x, dy = py - c.y;
          const double d = dr * dr + dg * dg + db * db + spatial_weight * (dx * dx + dy * dy);
          if (d < best) {
            best = d;
            next[p] = id;
          }
        }
      }
    }
    map.ids = std::move(next);
  }
  compact(map, clusters);
  return map;
}

}  // namespace

std::vector<std::vector<std::size_t>> SegmentMap::members() const {
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t p = 0; p < ids.size(); ++p) out[ids[p]].push_back(p);
  return out;
}

std::string SegmentMap::digest() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  auto feed = [&crc](std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    crc = crc32(crc, bytes, 4);
  };
  feed(static_cast<std::uint32_t>(width));
  feed(static_cast<std::uint32_t>(height));
  for (std::size_t id : ids) feed(static_cast<std::uint32_t>(id));
  char hex[9];
  std::snprintf(hex, sizeof(hex), "%08lx", static_cast<unsigned long>(crc));
  return hex;
}

void SegmentMap::validate() const {
  if (ids.size() != width * height) throw InvalidArgument("segment map size does not match its dimensions");
  std::vector<bool> used(count, false);
  for (std::size_t id : ids) {
    if (id >= count) throw InvalidArgument("segment id out of range");
    used[id] = true;
  }
  for (std::size_t id = 0; id < count; ++id) {
    if (!used[id]) throw InvalidArgument("segment " + std::to_string(id) + " is empty");
  }
}

SegmentMethod parse_segment_method(const std::string& text) {
  if (text == "grid") return SegmentMethod::kGrid;
  if (text == "slic") return SegmentMethod::kSlic;
  throw InvalidArgument("unknown segmentation method '" + text + "' (expected grid or slic)");
}

SegmentMap grid_segments(std::size_t width, std::size_t height, std::size_t cells_per_side) {
  if (cells_per_side == 0) throw InvalidArgument("grid needs at least one cell per side");
  if (cells_per_side > width || cells_per_side > height) {
    throw InvalidArgument("grid of " + std::to_string(cells_per_side) + " cells per side exceeds the image");
  }
  return tile_partition(width, height, cells_per_side, cells_per_side);
}

SegmentMap segment_image(const Tensor& image, const SegmentParams& params) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw InvalidArgument("segment_image expects [H,W,3], got " + shape_to_string(image.shape()));
  }
  const std::size_t height = image.dim(0), width = image.dim(1);
  if (params.method == SegmentMethod::kGrid) return grid_segments(width, height, params.grid_cells);
  if (params.target_segments == 0 || params.iterations == 0 || !(params.compactness > 0.0)) {
    throw InvalidArgument("slic parameters must be positive");
  }
  if (params.target_segments > width * height) {
    throw InvalidArgument("slic: target of " + std::to_string(params.target_segments) + " segments exceeds the pixel count");
  }
  return slic(image, params);
}

}  // namespace mcnn
