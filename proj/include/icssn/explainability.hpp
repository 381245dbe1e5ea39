#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icssn/classification.hpp"
#include "icssn/data.hpp"
#include "icssn/segmentation.hpp"

namespace icssn {

// Class-activation map at input resolution, min-max normalized to [0,1].
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::string target;
  // Set when the target's gradient vanished or the map was constant; values are then all zero.
  bool degenerate = false;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Grad-CAM over the encoder output. Target score: sum of class-1 logits over
// the pixels of `region`. A null or empty region falls back to the predicted
// landslide pixels, then to the whole tile.
Heatmap grad_cam(SegmentationNet& net, const Tile& tile, const Mask* region = nullptr);

// Grad-CAM for a joint class of the self-paired tile; the gradient is taken
// with respect to the slot-A features. Target score is the log-probability.
Heatmap grad_cam(ClassificationNet& net, const Tile& tile, JointClass target);

// Weighting step shared by both branches: features 1 x C x h x w (part of the
// graph that produced `score`).
Heatmap grad_cam_from(const torch::Tensor& features, const torch::Tensor& score, int height, int width,
                      std::string target);

// JET-coloured heatmap alpha-blended over the tile.
Tile heatmap_overlay(const Tile& tile, const Heatmap& heat, double alpha = 0.5);
void write_heatmap_png(const Heatmap& heat, const std::filesystem::path& path);

struct BandHeat {
  double band_mean = 0.0;      // within half_width pixels of the mask boundary, either side
  double interior_mean = 0.0;  // remaining mask pixels
  std::size_t band_pixels = 0;
  std::size_t interior_pixels = 0;
};

BandHeat band_heat(const Heatmap& heat, const Mask& mask, int half_width);

}  // namespace icssn
