#include "icssn/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "icssn/errors.hpp"

namespace icssn {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion_counts(const Mask& pred, const Mask& truth) {
  if (pred.height != truth.height || pred.width != truth.width || pred.labels.size() != truth.labels.size())
    throw AlignmentError("prediction and truth masks differ in shape");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] != 0;
    const bool t = truth.labels[i] != 0;
    if (p && t)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

ConfusionCounts confusion_counts(const std::vector<Mask>& preds, const std::vector<Mask>& truths) {
  if (preds.size() != truths.size()) throw AlignmentError("prediction and truth lists differ in length");
  ConfusionCounts total;
  for (std::size_t i = 0; i < preds.size(); ++i) total += confusion_counts(preds[i], truths[i]);
  return total;
}

namespace {

// num / den with the 0/0 convention; `absent` marks the perfect-absence case.
double ratio(std::uint64_t num, std::uint64_t den, bool absent, const DegenerateConventions& conv) {
  if (den == 0) return absent ? conv.perfect_absence : conv.otherwise;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

PixelMetrics pixel_metrics(const ConfusionCounts& c, const DegenerateConventions& conv) {
  PixelMetrics m;
  const bool no_landslide = c.tp + c.fp + c.fn == 0;
  const bool no_slope = c.tn + c.fp + c.fn == 0;
  m.pa = ratio(c.tp + c.tn, c.total(), c.total() == 0, conv);
  m.precision = ratio(c.tp, c.tp + c.fp, no_landslide, conv);
  m.recall = ratio(c.tp, c.tp + c.fn, no_landslide, conv);
  m.landslide_iou = ratio(c.tp, c.tp + c.fp + c.fn, no_landslide, conv);
  m.slope_iou = ratio(c.tn, c.tn + c.fn + c.fp, no_slope, conv);
  m.miou = 0.5 * (m.landslide_iou + m.slope_iou);
  const double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : (no_landslide ? conv.perfect_absence : conv.otherwise);
  return m;
}

ObjectRuleConfig ObjectRuleConfig::scaled_to(int tile_area) const {
  ObjectRuleConfig out = *this;
  const double s = static_cast<double>(tile_area) / static_cast<double>(reference_area);
  out.landslide_hit_threshold = std::max(1, static_cast<int>(std::lround(landslide_hit_threshold * s)));
  out.slope_fp_threshold = std::max(1, static_cast<int>(std::lround(slope_fp_threshold * s)));
  out.reference_area = tile_area;
  return out;
}

double average_accuracy(double acc_landslide, double acc_slope) { return 0.5 * (acc_landslide + acc_slope); }

ObjectAccuracy object_level_accuracy(const std::vector<Mask>& preds, const std::vector<Mask>& truths,
                                     const std::vector<ObjectLabel>& labels, const ObjectRuleConfig& cfg,
                                     const DegenerateConventions& conv) {
  if (preds.size() != truths.size() || preds.size() != labels.size())
    throw AlignmentError("object_level_accuracy needs one prediction, truth and label per sample");
  if (cfg.landslide_hit_threshold <= 0 || cfg.slope_fp_threshold <= 0)
    throw ConfigError("object rule thresholds must be positive");
  std::size_t slide_ok = 0, slope_ok = 0;
  ObjectAccuracy acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto c = confusion_counts(preds[i], truths[i]);
    if (labels[i] == ObjectLabel::landslide) {
      ++acc.n_landslide;
      if (c.tp >= static_cast<std::uint64_t>(cfg.landslide_hit_threshold)) ++slide_ok;
    } else {
      ++acc.n_slope;
      if (c.tp + c.fp <= static_cast<std::uint64_t>(cfg.slope_fp_threshold)) ++slope_ok;
    }
  }
  acc.acc_landslide = ratio(slide_ok, acc.n_landslide, true, conv);
  acc.acc_slope = ratio(slope_ok, acc.n_slope, true, conv);
  acc.acc_avg = average_accuracy(acc.acc_landslide, acc.acc_slope);
  return acc;
}

BinaryMetrics binary_metrics(const std::vector<ObjectLabel>& predicted, const std::vector<ObjectLabel>& truth,
                             const DegenerateConventions& conv) {
  if (predicted.size() != truth.size()) throw AlignmentError("predicted and true label lists differ in length");
  BinaryMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == ObjectLabel::landslide;
    const bool t = truth[i] == ObjectLabel::landslide;
    if (p && t)
      ++m.counts.tp;
    else if (p)
      ++m.counts.fp;
    else if (t)
      ++m.counts.fn;
    else
      ++m.counts.tn;
  }
  const auto pm = pixel_metrics(m.counts, conv);
  m.accuracy = pm.pa;
  m.precision = pm.precision;
  m.recall = pm.recall;
  m.f1 = pm.f1;
  return m;
}

}  // namespace icssn
