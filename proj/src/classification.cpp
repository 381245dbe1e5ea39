#include "icssn/classification.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "icssn/complexity.hpp"
#include "icssn/errors.hpp"
#include "icssn/log.hpp"
#include "icssn/tensors.hpp"

namespace icssn {

namespace {
constexpr double kProbFloor = 1e-12;
}

std::string_view to_string(JointClass c) {
  switch (c) {
    case JointClass::LL: return "LL";
    case JointClass::LS: return "LS";
    case JointClass::SL: return "SL";
    case JointClass::SS: return "SS";
  }
  return "SS";
}

JointClass joint_class_from_string(std::string_view name) {
  for (auto c : {JointClass::LL, JointClass::LS, JointClass::SL, JointClass::SS})
    if (to_string(c) == name) return c;
  throw ConfigError("unknown joint class '" + std::string(name) + "'");
}

JointClass joint_class_of(ObjectLabel a, ObjectLabel b) {
  const bool la = a == ObjectLabel::landslide;
  const bool lb = b == ObjectLabel::landslide;
  if (la && lb) return JointClass::LL;
  if (la) return JointClass::LS;
  if (lb) return JointClass::SL;
  return JointClass::SS;
}

void validate(const ClassifierConfig& cfg) {
  if (cfg.fc_layers < 1) throw ConfigError("fc_layers must be at least 1");
  if (cfg.hidden_units < 1) throw ConfigError("hidden_units must be positive");
}

std::string_view to_string(PoolingKind p) { return p == PoolingKind::max ? "max" : "avg"; }
std::string_view to_string(HeadKind h) { return h == HeadKind::joint4 ? "joint4" : "binary2"; }

PoolingKind pooling_from_string(std::string_view name) {
  if (name == "max") return PoolingKind::max;
  if (name == "avg") return PoolingKind::avg;
  throw ConfigError("pooling must be 'max' or 'avg', got '" + std::string(name) + "'");
}

HeadKind head_from_string(std::string_view name) {
  if (name == "joint4") return HeadKind::joint4;
  if (name == "binary2") return HeadKind::binary2;
  throw ConfigError("head must be 'joint4' or 'binary2', got '" + std::string(name) + "'");
}

namespace {

// Cycles through a pool in shuffled order, reshuffling on each wrap.
class CyclicDraw {
 public:
  CyclicDraw(std::vector<const Sample*> pool, std::mt19937_64& rng) : pool_(std::move(pool)), rng_(rng) {
    std::shuffle(pool_.begin(), pool_.end(), rng_);
  }
  const Sample* next() {
    if (next_ == pool_.size()) {
      std::shuffle(pool_.begin(), pool_.end(), rng_);
      next_ = 0;
    }
    return pool_[next_++];
  }
  bool empty() const { return pool_.empty(); }

 private:
  std::vector<const Sample*> pool_;
  std::mt19937_64& rng_;
  std::size_t next_ = 0;
};

}  // namespace

std::vector<PairSample> form_pairs(const std::vector<const Sample*>& batch, std::uint64_t seed) {
  std::vector<const Sample*> slides, slopes;
  for (const auto* s : batch) (s->object_label == ObjectLabel::landslide ? slides : slopes).push_back(s);
  std::mt19937_64 rng(seed);
  CyclicDraw slide_draw(std::move(slides), rng);
  CyclicDraw slope_draw(std::move(slopes), rng);

  std::vector<JointClass> classes;
  classes.reserve(batch.size());
  if (slide_draw.empty() || slope_draw.empty()) {
    if (!batch.empty()) log::warn("form_pairs: single-class batch, emitting same-class pairs only");
    const auto only = slide_draw.empty() ? JointClass::SS : JointClass::LL;
    classes.assign(batch.size(), only);
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) classes.push_back(static_cast<JointClass>(i % 4));
    std::shuffle(classes.begin(), classes.end(), rng);
  }

  std::vector<PairSample> pairs;
  pairs.reserve(classes.size());
  for (auto c : classes) {
    const bool a_slide = c == JointClass::LL || c == JointClass::LS;
    const bool b_slide = c == JointClass::LL || c == JointClass::SL;
    PairSample p;
    p.a = a_slide ? slide_draw.next() : slope_draw.next();
    p.b = b_slide ? slide_draw.next() : slope_draw.next();
    p.joint_label = c;
    pairs.push_back(p);
  }
  return pairs;
}

std::vector<PairSample> form_pairs(const std::vector<Sample>& batch, std::uint64_t seed) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return form_pairs(ptrs, seed);
}

PairHeadImpl::PairHeadImpl(int feature_channels, const ClassifierConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  const int outputs = cfg.head == HeadKind::joint4 ? kJointClasses : 2;
  int in = 2 * feature_channels;
  for (int k = 0; k < cfg.fc_layers; ++k) {
    const bool last = k + 1 == cfg.fc_layers;
    const int out = last ? outputs : cfg.hidden_units;
    fcs_.push_back(register_module("fc" + std::to_string(k + 1), torch::nn::Linear(in, out)));
    in = out;
  }
}

void PairHeadImpl::zero_last_layer() {
  torch::NoGradGuard no_grad;
  fcs_.back()->weight.zero_();
  fcs_.back()->bias.zero_();
}

torch::Tensor PairHeadImpl::forward(const torch::Tensor& features_a, const torch::Tensor& features_b) {
  auto pool = [&](const torch::Tensor& f) {
    return cfg_.pooling == PoolingKind::max ? std::get<0>(f.flatten(2).max(2)) : f.mean({2, 3});
  };
  auto z = torch::cat({pool(features_a), pool(features_b)}, 1);
  for (std::size_t k = 0; k < fcs_.size(); ++k) {
    z = nn_ops::run(fcs_[k], z);
    if (k + 1 < fcs_.size()) z = torch::relu(z);
  }
  if (cfg_.head == HeadKind::joint4) return torch::log_softmax(z, 1);
  auto za = z.select(1, 0);
  auto zb = z.select(1, 1);
  auto ls = [](const torch::Tensor& t) { return torch::log_sigmoid(t); };
  return torch::stack({ls(za) + ls(zb), ls(za) + ls(-zb), ls(-za) + ls(zb), ls(-za) + ls(-zb)}, 1);
}

ClassificationNetImpl::ClassificationNetImpl(const EncoderConfig& encoder_cfg, const ClassifierConfig& cfg) {
  encoder = register_module("encoder", Encoder(encoder_cfg));
  classifier = register_module("classifier", PairHead(encoder_cfg.output_channels, cfg));
}

ClassificationNetImpl::Output ClassificationNetImpl::forward_full(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("pair inputs must have equal shapes");
  Output out;
  out.features_a = encoder->forward(a);
  out.features_b = encoder->forward(b);
  out.log_probs = classifier->forward(out.features_a, out.features_b);
  return out;
}

torch::Tensor ClassificationNetImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  return forward_full(a, b).log_probs;
}

std::array<double, 4> classify_pair(ClassificationNet& net, const Tile& a, const Tile& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("classify_pair needs equal-sized tiles");
  torch::NoGradGuard no_grad;
  auto probs = net->forward(tile_to_tensor(a), tile_to_tensor(b)).exp().to(torch::kFloat64).contiguous();
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) out[k] = probs[0][k].item<double>();
  return out;
}

torch::Tensor classification_loss(const torch::Tensor& log_probs, const torch::Tensor& labels) {
  if (log_probs.dim() != 2 || log_probs.size(1) != kJointClasses || labels.dim() != 1 ||
      labels.size(0) != log_probs.size(0))
    throw ShapeError("classification_loss expects B x 4 log-probabilities and B labels");
  auto picked = log_probs.gather(1, labels.to(torch::kInt64).unsqueeze(1)).squeeze(1);
  return -picked.clamp_min(std::log(kProbFloor)).mean();
}

double classification_loss(const std::array<double, 4>& probs, JointClass label) {
  return -std::log(std::max(probs[static_cast<int>(label)], kProbFloor));
}

ObjectPrediction object_label_from_joint(const std::array<double, 4>& probs) {
  const auto best = static_cast<JointClass>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  ObjectPrediction p;
  p.landslide_probability = probs[0] + probs[1];
  if (best == JointClass::LL)
    p.label = ObjectLabel::landslide;
  else if (best == JointClass::SS)
    p.label = ObjectLabel::slope;
  else
    p.label = p.landslide_probability >= 0.5 ? ObjectLabel::landslide : ObjectLabel::slope;
  return p;
}

ObjectPrediction infer_object_label(ClassificationNet& net, const Tile& tile) {
  // Self-pairing: both slots see the same features, so encode once.
  torch::NoGradGuard no_grad;
  auto f = net->encoder->forward(tile_to_tensor(tile));
  auto probs = net->classifier->forward(f, f).exp().to(torch::kFloat64);
  std::array<double, 4> p{};
  for (int k = 0; k < 4; ++k) p[k] = probs[0][k].item<double>();
  return object_label_from_joint(p);
}

}  // namespace icssn
