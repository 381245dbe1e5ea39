#include "icssn/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "icssn/complexity.hpp"
#include "icssn/errors.hpp"
#include "icssn/tensors.hpp"

namespace icssn {

namespace {
constexpr double kProbFloor = 1e-12;

double unit_norm_tolerance(const torch::Tensor& t) { return t.scalar_type() == torch::kFloat64 ? 1e-6 : 1e-4; }
}  // namespace

std::size_t SoclGrid::count(SoclLabel l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

SoclGrid derive_socl_labels(const Mask& mask, const SoclThresholds& th) {
  if (th.block <= 0 || th.lo < 0 || th.hi < th.lo) throw ConfigError("invalid SOCL thresholds");
  if (mask.height % th.block != 0 || mask.width % th.block != 0)
    throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " is not divisible by block size " + std::to_string(th.block));
  SoclGrid g;
  g.rows = mask.height / th.block;
  g.cols = mask.width / th.block;
  std::vector<int> counts(static_cast<std::size_t>(g.rows) * g.cols, 0);
  for (int y = 0; y < mask.height; ++y) {
    const std::size_t row_base = static_cast<std::size_t>(y / th.block) * g.cols;
    for (int x = 0; x < mask.width; ++x) counts[row_base + x / th.block] += mask.at(y, x);
  }
  g.labels.resize(counts.size());
  std::transform(counts.begin(), counts.end(), g.labels.begin(), [&](int n) {
    if (n < th.lo) return SoclLabel::negative;
    if (n <= th.hi) return SoclLabel::positive;
    return SoclLabel::irrelevant;
  });
  return g;
}

SoclGrid derive_socl_labels(const Mask& mask, int block, int lo, int hi) {
  return derive_socl_labels(mask, SoclThresholds{block, lo, hi});
}

std::string_view to_string(BlockStrategy s) {
  switch (s) {
    case BlockStrategy::edge: return "edge";
    case BlockStrategy::center: return "center";
    case BlockStrategy::hybrid: return "hybrid";
  }
  return "edge";
}

BlockStrategy block_strategy_from_string(std::string_view name) {
  for (auto s : {BlockStrategy::edge, BlockStrategy::center, BlockStrategy::hybrid})
    if (to_string(s) == name) return s;
  throw ConfigError("strategy must be edge, center or hybrid, got '" + std::string(name) + "'");
}

void validate(const SegLossConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (!(cfg.tau > 0.0)) throw ConfigError("tau must be positive");
  if (cfg.n_pos < 1 || cfg.n_neg < 1) throw ConfigError("n_pos and n_neg must be at least 1");
  const auto& th = cfg.thresholds;
  if (th.block <= 0 || th.lo < 0 || th.hi < th.lo || th.hi > th.block * th.block)
    throw ConfigError("invalid SOCL block thresholds");
}

SoclPairBatch select_socl_pairs(const torch::Tensor& features, const std::vector<SoclGrid>& grids,
                                const SegLossConfig& cfg, std::uint64_t seed) {
  if (features.dim() != 4) throw ShapeError("features must be B x C x h x w");
  const auto B = features.size(0);
  const auto C = features.size(1);
  const auto h = features.size(2);
  const auto w = features.size(3);
  if (static_cast<std::int64_t>(grids.size()) != B) throw AlignmentError("one SOCL grid per feature map is required");

  std::vector<BlockCoord> pos_pool, irr_pool, neg_pool;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& g = grids[static_cast<std::size_t>(b)];
    if (g.rows != h || g.cols != w)
      throw AlignmentError("SOCL grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                           " does not align with features " + std::to_string(h) + "x" + std::to_string(w));
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const BlockCoord bc{static_cast<int>(b), r, c};
        switch (g.at(r, c)) {
          case SoclLabel::positive: pos_pool.push_back(bc); break;
          case SoclLabel::irrelevant: irr_pool.push_back(bc); break;
          case SoclLabel::negative: neg_pool.push_back(bc); break;
        }
      }
  }

  std::mt19937_64 rng(seed);
  std::shuffle(pos_pool.begin(), pos_pool.end(), rng);
  std::shuffle(irr_pool.begin(), irr_pool.end(), rng);
  std::shuffle(neg_pool.begin(), neg_pool.end(), rng);

  SoclPairBatch batch;
  batch.tau = cfg.tau;
  auto& positives = batch.positive_coords;
  switch (cfg.strategy) {
    case BlockStrategy::edge:
      positives.assign(pos_pool.begin(), pos_pool.begin() + std::min<std::ptrdiff_t>(cfg.n_pos, pos_pool.size()));
      break;
    case BlockStrategy::center:
      positives.assign(irr_pool.begin(), irr_pool.begin() + std::min<std::ptrdiff_t>(cfg.n_pos, irr_pool.size()));
      break;
    case BlockStrategy::hybrid: {
      std::bernoulli_distribution coin(0.5);
      std::size_t ip = 0, ii = 0;
      while (static_cast<int>(positives.size()) < cfg.n_pos && (ip < pos_pool.size() || ii < irr_pool.size())) {
        const bool take_edge = ii == irr_pool.size() || (ip < pos_pool.size() && coin(rng));
        positives.push_back(take_edge ? pos_pool[ip++] : irr_pool[ii++]);
      }
      break;
    }
  }
  batch.negative_coords.assign(neg_pool.begin(),
                               neg_pool.begin() + std::min<std::ptrdiff_t>(cfg.n_neg, neg_pool.size()));

  auto flat = torch::nn::functional::normalize(features, torch::nn::functional::NormalizeFuncOptions().dim(1))
                  .permute({0, 2, 3, 1})
                  .reshape({B * h * w, C});
  auto gather = [&](const std::vector<BlockCoord>& coords) {
    std::vector<std::int64_t> idx;
    idx.reserve(coords.size());
    for (const auto& bc : coords) idx.push_back((bc.batch * h + bc.row) * w + bc.col);
    return flat.index_select(0, torch::tensor(idx, torch::kInt64));
  };
  batch.positives = gather(positives);
  batch.negatives = gather(batch.negative_coords);
  batch.anchors = batch.positives;
  const auto P = static_cast<std::int64_t>(positives.size());
  batch.positive_mask = torch::ones({P, P}, torch::kBool).logical_xor(torch::eye(P, torch::kBool));
  batch.empty = P < 2;
  return batch;
}

LossValue supervised_contrastive_loss(const SoclPairBatch& batch) {
  const auto opts = batch.anchors.defined() ? batch.anchors.options() : torch::TensorOptions(torch::kFloat32);
  if (batch.empty || !batch.anchors.defined() || batch.anchors.size(0) == 0 || batch.positives.size(0) == 0)
    return {torch::zeros({}, opts), true};
  if (!(batch.tau > 0.0)) throw ContractError("temperature must be positive");

  auto check_unit = [](const torch::Tensor& t, const char* what) {
    if (t.size(0) == 0) return;
    const double dev = (t.detach().norm(2, 1) - 1.0).abs().max().item<double>();
    if (!(dev <= unit_norm_tolerance(t)))
      throw ContractError(std::string(what) + " are not unit-norm (max deviation " + std::to_string(dev) + ")");
  };
  check_unit(batch.anchors, "anchors");
  check_unit(batch.positives, "positives");
  check_unit(batch.negatives, "negatives");

  const auto A = batch.anchors.size(0);
  const auto P = batch.positives.size(0);
  if (batch.positive_mask.sizes() != torch::IntArrayRef({A, P}))
    throw ContractError("positive_mask must be anchors x positives");
  auto mask = batch.positive_mask.to(batch.anchors.scalar_type());
  auto per_anchor = mask.sum(1);
  if ((per_anchor == 0).any().item<bool>()) throw ContractError("every anchor needs at least one positive");

  auto s_pos = batch.anchors.matmul(batch.positives.t()) / batch.tau;
  torch::Tensor terms;
  if (batch.negatives.size(0) > 0) {
    auto neg_lse = torch::logsumexp(batch.anchors.matmul(batch.negatives.t()) / batch.tau, 1, /*keepdim=*/true);
    terms = torch::logaddexp(s_pos, neg_lse) - s_pos;
  } else {
    terms = torch::zeros_like(s_pos);
  }
  auto loss = ((terms * mask).sum(1) / per_anchor).mean();
  return {loss, false};
}

torch::Tensor pixel_cross_entropy(const torch::Tensor& logits, const torch::Tensor& mask) {
  if (logits.dim() != 4 || logits.size(1) != 2) throw ShapeError("logits must be B x 2 x H x W");
  if (mask.dim() != 3 || mask.size(0) != logits.size(0) || mask.size(1) != logits.size(2) ||
      mask.size(2) != logits.size(3))
    throw ShapeError("mask shape does not match logits");
  auto logp = torch::log_softmax(logits, 1).clamp_min(std::log(kProbFloor));
  auto y = mask.to(logits.scalar_type());
  return -(y * logp.select(1, 1) + (1.0 - y) * logp.select(1, 0)).mean();
}

SegLossBreakdown segmentation_loss(const torch::Tensor& logits, const std::vector<const Mask*>& masks,
                                   const torch::Tensor& features, const SegLossConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (masks.empty()) throw SizeError("segmentation_loss needs at least one mask");
  SegLossBreakdown out;
  out.cross_entropy = pixel_cross_entropy(logits, masks_to_tensor(masks));
  out.contrastive = torch::zeros({}, logits.options());
  out.total = out.cross_entropy;
  if (cfg.lambda == 0.0) return out;

  const int block = cfg.thresholds.block;
  if (features.dim() != 4 || features.size(2) * block != masks.front()->height ||
      features.size(3) * block != masks.front()->width)
    throw ShapeError("features must sit at 1/" + std::to_string(block) + " of the mask resolution");
  std::vector<SoclGrid> grids;
  grids.reserve(masks.size());
  for (const auto* m : masks) grids.push_back(derive_socl_labels(*m, cfg.thresholds));
  auto batch = select_socl_pairs(features, grids, cfg, seed);
  auto con = supervised_contrastive_loss(batch);
  out.contrastive_empty = con.empty;
  if (con.empty) return out;
  out.contrastive = con.value;
  out.total = out.cross_entropy + cfg.lambda * con.value;
  return out;
}

DecoderImpl::DecoderImpl(int in_channels, double dropout) {
  const int mid = std::max(1, in_channels / 2);
  const int out = std::max(1, in_channels / 4);
  up1_ = register_module("up1", torch::nn::ConvTranspose2d(
                                    torch::nn::ConvTranspose2dOptions(in_channels, mid, 4).stride(4).bias(false)));
  bn1_ = register_module("bn1", torch::nn::BatchNorm2d(mid));
  drop1_ = register_module("drop1", torch::nn::Dropout(dropout));
  up2_ = register_module(
      "up2", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(mid, out, 4).stride(2).padding(1).bias(false)));
  bn2_ = register_module("bn2", torch::nn::BatchNorm2d(out));
  drop2_ = register_module("drop2", torch::nn::Dropout(dropout));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, 2, 1)));
  torch::NoGradGuard no_grad;
  torch::nn::init::kaiming_normal_(up1_->weight, 0.0, torch::kFanIn, torch::kReLU);
  torch::nn::init::kaiming_normal_(up2_->weight, 0.0, torch::kFanIn, torch::kReLU);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& features) {
  auto y = drop1_(torch::relu(bn1_(nn_ops::run(up1_, features))));
  y = drop2_(torch::relu(bn2_(nn_ops::run(up2_, y))));
  return nn_ops::run(head_, y);
}

SegmentationNetImpl::SegmentationNetImpl(const EncoderConfig& encoder_cfg, double dropout) {
  encoder = register_module("encoder", Encoder(encoder_cfg));
  decoder = register_module("decoder", Decoder(encoder_cfg.output_channels, dropout));
}

SegmentationNetImpl::Output SegmentationNetImpl::forward_full(const torch::Tensor& x) {
  Output out;
  out.features = encoder->forward(x);
  out.logits = decoder->forward(out.features);
  return out;
}

torch::Tensor SegmentationNetImpl::forward(const torch::Tensor& x) { return forward_full(x).logits; }

Mask predict_mask(SegmentationNet& net, const Tile& tile) {
  torch::NoGradGuard no_grad;
  auto logits = net->forward(tile_to_tensor(tile));
  return tensor_to_mask(logits.argmax(1)[0]);
}

}  // namespace icssn
