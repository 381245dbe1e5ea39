#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "icssn/data.hpp"
#include "icssn/encoder.hpp"

namespace icssn {

// Block label for sub-object-level contrast: boundary blocks are positive,
// background blocks negative, landslide interiors irrelevant.
enum class SoclLabel : std::uint8_t { negative = 0, positive = 1, irrelevant = 2 };

struct SoclGrid {
  int rows = 0;
  int cols = 0;
  std::vector<SoclLabel> labels;

  SoclLabel at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t count(SoclLabel l) const;
  bool operator==(const SoclGrid&) const = default;
};

struct SoclThresholds {
  int block = 8;
  int lo = 7;   // fewer landslide pixels than this: negative
  int hi = 57;  // more than this: irrelevant; [lo, hi] inclusive: positive
};

// Per-block landslide pixel count n: n < lo -> N, lo <= n <= hi -> P, n > hi -> I.
SoclGrid derive_socl_labels(const Mask& mask, const SoclThresholds& th = {});
SoclGrid derive_socl_labels(const Mask& mask, int block, int lo, int hi);

enum class BlockStrategy { edge, center, hybrid };
std::string_view to_string(BlockStrategy s);
BlockStrategy block_strategy_from_string(std::string_view name);

struct SegLossConfig {
  double lambda = 0.1;
  double tau = 0.1;
  int n_pos = 64;
  int n_neg = 64;
  BlockStrategy strategy = BlockStrategy::edge;
  SoclThresholds thresholds;
};

void validate(const SegLossConfig& cfg);

struct BlockCoord {
  int batch = 0;
  int row = 0;
  int col = 0;
  auto operator<=>(const BlockCoord&) const = default;
};

// Unit-norm block features for the contrastive term. positive_mask[i][j]
// says whether positives[j] belongs to anchor i's positive set.
struct SoclPairBatch {
  torch::Tensor anchors;        // A x C
  torch::Tensor positives;      // P x C
  torch::Tensor negatives;      // N x C (may have N == 0)
  torch::Tensor positive_mask;  // A x P bool
  double tau = 0.1;
  std::vector<BlockCoord> positive_coords;
  std::vector<BlockCoord> negative_coords;
  bool empty = false;
};

// Normalizes features (B x C x h x w) per block, then samples up to n_pos
// positives and n_neg negatives without replacement. Each selected positive is
// an anchor against the remaining positives and all negatives.
SoclPairBatch select_socl_pairs(const torch::Tensor& features, const std::vector<SoclGrid>& grids,
                                const SegLossConfig& cfg, std::uint64_t seed);

struct LossValue {
  torch::Tensor value;  // 0-d
  bool empty = false;   // true when the contrastive term had nothing to contrast
};

// Mean over anchors of (1/|P_i|) sum_{p in P_i} -log(e^{a.p/tau} / (e^{a.p/tau} + sum_n e^{a.n/tau})).
// Throws ContractError on non-unit vectors or anchors with no positives.
LossValue supervised_contrastive_loss(const SoclPairBatch& batch);

// Pixel-averaged binary cross-entropy of the class-1 softmax probability,
// probabilities clamped to [1e-12, 1 - 1e-12]. logits: B x 2 x H x W, mask: B x H x W.
torch::Tensor pixel_cross_entropy(const torch::Tensor& logits, const torch::Tensor& mask);

struct SegLossBreakdown {
  torch::Tensor total;
  torch::Tensor cross_entropy;
  torch::Tensor contrastive;  // zero when lambda == 0 or the batch is empty
  bool contrastive_empty = true;
};

// CE + lambda * contrastive. features must sit at 1/block of the mask resolution.
SegLossBreakdown segmentation_loss(const torch::Tensor& logits, const std::vector<const Mask*>& masks,
                                   const torch::Tensor& features, const SegLossConfig& cfg, std::uint64_t seed);

// Two transposed-convolution stages (x4 then x2) with BN/ReLU/dropout and a
// final 1x1 projection to two classes.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(int in_channels, double dropout = 0.1);
  torch::Tensor forward(const torch::Tensor& features);

 private:
  torch::nn::ConvTranspose2d up1_{nullptr}, up2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Dropout drop1_{nullptr}, drop2_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

class SegmentationNetImpl : public torch::nn::Module {
 public:
  SegmentationNetImpl(const EncoderConfig& encoder_cfg, double dropout = 0.1);

  struct Output {
    torch::Tensor logits;    // B x 2 x H x W
    torch::Tensor features;  // B x C x H/8 x W/8
  };
  Output forward_full(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
};
TORCH_MODULE(SegmentationNet);

// Argmax prediction for one tile (eval mode is the caller's responsibility).
Mask predict_mask(SegmentationNet& net, const Tile& tile);

}  // namespace icssn
