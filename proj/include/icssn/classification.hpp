#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "icssn/data.hpp"
#include "icssn/encoder.hpp"

namespace icssn {

// Joint label of an ordered pair. Index order is the network's output order.
enum class JointClass : std::uint8_t { LL = 0, LS = 1, SL = 2, SS = 3 };

inline constexpr int kJointClasses = 4;

std::string_view to_string(JointClass c);
JointClass joint_class_from_string(std::string_view name);
JointClass joint_class_of(ObjectLabel a, ObjectLabel b);

struct PairSample {
  const Sample* a = nullptr;
  const Sample* b = nullptr;
  JointClass joint_label = JointClass::SS;
};

enum class PoolingKind { max, avg };
// joint4: one 4-way softmax. binary2: independent per-slot landslide logits
// whose product distribution is reported over the same four classes.
enum class HeadKind { joint4, binary2 };

struct ClassifierConfig {
  int hidden_units = 256;
  PoolingKind pooling = PoolingKind::max;
  int fc_layers = 2;
  HeadKind head = HeadKind::joint4;
};

void validate(const ClassifierConfig& cfg);
std::string_view to_string(PoolingKind p);
std::string_view to_string(HeadKind h);
PoolingKind pooling_from_string(std::string_view name);
HeadKind head_from_string(std::string_view name);

// Pairs samples so every joint class appears in roughly equal measure. Emits
// batch.size() pairs; a single-class batch yields only same-class pairs.
std::vector<PairSample> form_pairs(const std::vector<const Sample*>& batch, std::uint64_t seed);
std::vector<PairSample> form_pairs(const std::vector<Sample>& batch, std::uint64_t seed);

// Pooled-feature head: global pooling of each slot, concat to 2C, fc stack.
class PairHeadImpl : public torch::nn::Module {
 public:
  PairHeadImpl(int feature_channels, const ClassifierConfig& cfg);
  // Returns B x 4 log-probabilities over {LL, LS, SL, SS}.
  torch::Tensor forward(const torch::Tensor& features_a, const torch::Tensor& features_b);
  // Zeroes the last fully-connected layer (uniform output).
  void zero_last_layer();

 private:
  ClassifierConfig cfg_;
  std::vector<torch::nn::Linear> fcs_;
};
TORCH_MODULE(PairHead);

// Siamese classifier: one encoder module applied to both slots.
class ClassificationNetImpl : public torch::nn::Module {
 public:
  ClassificationNetImpl(const EncoderConfig& encoder_cfg, const ClassifierConfig& cfg);

  struct Output {
    torch::Tensor log_probs;   // B x 4
    torch::Tensor features_a;  // encoder output of slot A
    torch::Tensor features_b;
  };

  Output forward_full(const torch::Tensor& a, const torch::Tensor& b);
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

  Encoder encoder{nullptr};
  PairHead classifier{nullptr};
};
TORCH_MODULE(ClassificationNet);

// Probabilities over {LL, LS, SL, SS}; throws ShapeError on unequal tile sizes.
std::array<double, 4> classify_pair(ClassificationNet& net, const Tile& a, const Tile& b);

// -log p(label), probabilities clamped at 1e-12. Mean over the batch.
// log_probs: B x 4, labels: B (int64).
torch::Tensor classification_loss(const torch::Tensor& log_probs, const torch::Tensor& labels);
double classification_loss(const std::array<double, 4>& probs, JointClass label);

struct ObjectPrediction {
  ObjectLabel label = ObjectLabel::slope;
  double landslide_probability = 0.0;  // slot-A marginal p(LL) + p(LS)
};

// Decision rule for a self-paired prediction.
ObjectPrediction object_label_from_joint(const std::array<double, 4>& probs);
ObjectPrediction infer_object_label(ClassificationNet& net, const Tile& tile);

}  // namespace icssn
