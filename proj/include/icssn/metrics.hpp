#pragma once

#include <cstdint>
#include <vector>

#include "icssn/data.hpp"

namespace icssn {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

// Values substituted for 0/0 ratios. A ratio whose every term is zero because
// the relevant class is absent from both prediction and truth scores
// `perfect_absence`; any other 0/0 (e.g. F1 with P = R = 0) scores `otherwise`.
struct DegenerateConventions {
  double perfect_absence = 1.0;
  double otherwise = 0.0;
};

struct PixelMetrics {
  double pa = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double landslide_iou = 0.0;
  double slope_iou = 0.0;
  double miou = 0.0;
  double f1 = 0.0;
};

// Throws AlignmentError when shapes differ.
ConfusionCounts confusion_counts(const Mask& pred, const Mask& truth);
// Micro-averaged: counts are summed over all pairs before any ratio is taken.
ConfusionCounts confusion_counts(const std::vector<Mask>& preds, const std::vector<Mask>& truths);

PixelMetrics pixel_metrics(const ConfusionCounts& c, const DegenerateConventions& conv = {});

struct ObjectRuleConfig {
  int landslide_hit_threshold = 400;
  int slope_fp_threshold = 100;
  int reference_area = 512 * 512;

  // Thresholds rescaled to a tile area (rounded to nearest, at least 1).
  ObjectRuleConfig scaled_to(int tile_area) const;
};

struct ObjectAccuracy {
  double acc_landslide = 0.0;
  double acc_slope = 0.0;
  double acc_avg = 0.0;
  std::size_t n_landslide = 0;
  std::size_t n_slope = 0;
};

// A landslide sample is correct when >= landslide_hit_threshold truth pixels are
// detected; a slope sample when <= slope_fp_threshold pixels are predicted as
// landslide. Thresholds are used as given (call scaled_to() first if needed).
ObjectAccuracy object_level_accuracy(const std::vector<Mask>& preds, const std::vector<Mask>& truths,
                                     const std::vector<ObjectLabel>& labels, const ObjectRuleConfig& cfg,
                                     const DegenerateConventions& conv = {});

// Equal-weight mean of the two class accuracies.
double average_accuracy(double acc_landslide, double acc_slope);

// Per-sample binary classification scores with landslide as the positive class.
struct BinaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  ConfusionCounts counts;
};

BinaryMetrics binary_metrics(const std::vector<ObjectLabel>& predicted, const std::vector<ObjectLabel>& truth,
                             const DegenerateConventions& conv = {});

}  // namespace icssn
