#pragma once

#include <cstddef>

#include "mcnn/segmentation.hpp"
#include "mcnn/tensor.hpp"
#include "mcnn/xai.hpp"

namespace mcnn {

struct OverlayStyle {
  std::size_t top_k = 5;           // lime: strongest positive segments shown
  double tint_alpha = 0.4;         // lime: magenta opacity
  bool draw_boundaries = true;     // lime: yellow outline of the shown segments
  double max_shap_alpha = 0.8;     // shap: opacity at |phi| = max |phi|
};

// Draws an explanation over an [H,W,3] image in [0,1] and returns a new
// [H,W,3] tensor. The style follows explanation.method:
//   lime     - magenta tint and yellow outline on the top-K positive segments
//   shap     - red (positive) / blue (negative), opacity |phi| / max |phi|
//   saliency - hot colour map blended in proportion to the heat
// Region methods need `segments`; a zero explanation leaves the image as is.
Tensor render_overlay(const Tensor& image, const Explanation& explanation, const SegmentMap* segments,
                      const OverlayStyle& style = {});

}  // namespace mcnn
