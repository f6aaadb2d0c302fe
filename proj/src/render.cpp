#include "mcnn/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "mcnn/errors.hpp"

namespace mcnn {

namespace {

using Color = std::array<double, 3>;

void blend(std::vector<double>& pixels, std::size_t p, const Color& color, double alpha) {
  for (std::size_t c = 0; c < 3; ++c) pixels[p * 3 + c] = (1.0 - alpha) * pixels[p * 3 + c] + alpha * color[c];
}

Color hot(double h) {
  return {std::clamp(3.0 * h, 0.0, 1.0), std::clamp(3.0 * h - 1.0, 0.0, 1.0), std::clamp(3.0 * h - 2.0, 0.0, 1.0)};
}

void check_segments(const Explanation& e, const SegmentMap* segments, std::size_t width, std::size_t height) {
  if (segments == nullptr) throw InvalidArgument("region explanations need a segment map to render");
  if (segments->width != width || segments->height != height) {
    throw InvalidArgument("segment map extents do not match the image");
  }
  if (segments->count != e.values.size()) {
    throw InvalidArgument("explanation has " + std::to_string(e.values.size()) + " values but the segment map has " +
                          std::to_string(segments->count) + " segments");
  }
}

}  // namespace

Tensor render_overlay(const Tensor& image, const Explanation& e, const SegmentMap* segments, const OverlayStyle& style) {
  if (image.rank() != 3 || image.dim(2) != 3) throw InvalidArgument("render_overlay expects an [H,W,3] image");
  const std::size_t height = image.dim(0), width = image.dim(1);
  std::vector<double> pixels(image.values().begin(), image.values().end());

  switch (e.method) {
    case Method::kSaliency: {
      if (e.values.size() != width * height) throw InvalidArgument("saliency heatmap does not match the image");
      for (std::size_t p = 0; p < width * height; ++p) {
        const double h = std::clamp(e.values[p], 0.0, 1.0);
        if (h > 0.0) blend(pixels, p, hot(h), h);
      }
      break;
    }
    case Method::kLime: {
      check_segments(e, segments, width, height);
      std::vector<std::size_t> order(e.values.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return e.values[a] > e.values[b]; });
      std::vector<bool> chosen(e.values.size(), false);
      for (std::size_t i = 0; i < std::min(style.top_k, order.size()); ++i) {
        if (e.values[order[i]] > 0.0) chosen[order[i]] = true;
      }
      const Color magenta{1.0, 0.0, 1.0}, yellow{1.0, 1.0, 0.0};
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const std::size_t id = segments->at(x, y);
          if (!chosen[id]) continue;
          const std::size_t p = y * width + x;
          const bool edge = (x > 0 && segments->at(x - 1, y) != id) || (x + 1 < width && segments->at(x + 1, y) != id) ||
                            (y > 0 && segments->at(x, y - 1) != id) || (y + 1 < height && segments->at(x, y + 1) != id);
          if (style.draw_boundaries && edge) blend(pixels, p, yellow, 1.0);
          else blend(pixels, p, magenta, style.tint_alpha);
        }
      }
      break;
    }
    case Method::kShap: {
      check_segments(e, segments, width, height);
      double peak = 0.0;
      for (double v : e.values) peak = std::max(peak, std::abs(v));
      if (peak == 0.0) break;
      const Color red{1.0, 0.0, 0.0}, blue{0.0, 0.0, 1.0};
      for (std::size_t p = 0; p < width * height; ++p) {
        const double v = e.values[segments->ids[p]];
        if (v == 0.0) continue;
        blend(pixels, p, v > 0.0 ? red : blue, style.max_shap_alpha * std::abs(v) / peak);
      }
      break;
    }
  }
  return Tensor(image.shape(), std::move(pixels));
}

}  // namespace mcnn
