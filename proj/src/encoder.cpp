#include "icssn/encoder.hpp"

#include <mutex>
#include <set>
#include <string>

#include "icssn/complexity.hpp"
#include "icssn/errors.hpp"
#include "icssn/log.hpp"

namespace icssn {

namespace F = torch::nn::functional;

namespace {

std::vector<int> stage_blocks(int depth) {
  switch (depth) {
    case 18: return {2, 2, 2, 2};
    case 50: return {3, 4, 6, 3};
    case 101: return {3, 4, 23, 3};
    default: throw ConfigError("backbone_depth must be 18, 50 or 101, got " + std::to_string(depth));
  }
}

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1, int padding = 0, int dilation = 1, bool bias = false) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(padding).dilation(dilation).bias(bias));
}

void kaiming_init(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& sub : m.modules(/*include_self=*/false)) {
    if (auto* c = sub->as<torch::nn::Conv2d>()) {
      torch::nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* bn = sub->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
}

}  // namespace

void validate(const EncoderConfig& cfg) {
  stage_blocks(cfg.backbone_depth);
  if (cfg.base_width <= 0) throw ConfigError("base_width must be positive");
  if (cfg.output_channels <= 0) throw ConfigError("output_channels must be positive");
  if (cfg.aspp_dilations.empty()) throw ConfigError("aspp_dilations must not be empty");
  std::set<int> seen;
  for (int d : cfg.aspp_dilations) {
    if (d <= 0) throw ConfigError("aspp dilations must be positive");
    if (!seen.insert(d).second) throw ConfigError("aspp dilations must be distinct");
  }
  if (cfg.se_reduction <= 0 || cfg.output_channels % cfg.se_reduction != 0)
    throw ConfigError("se_reduction must divide output_channels");
}

std::pair<int, int> stage_channels(const EncoderConfig& cfg) {
  const int expansion = cfg.backbone_depth >= 50 ? 4 : 1;
  return {cfg.base_width * 2 * expansion, cfg.base_width * 8 * expansion};
}

void check_encoder_input(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3)
    throw ShapeError("encoder expects a B x 3 x H x W tensor, got " + std::to_string(x.dim()) + "-d input");
  if (x.size(2) % 8 != 0 || x.size(3) % 8 != 0 || x.size(2) == 0 || x.size(3) == 0)
    throw ShapeError("encoder input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " is not divisible by 8");
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int planes, int stride, int dilation, bool bottleneck)
    : bottleneck_(bottleneck), out_channels_(bottleneck ? planes * 4 : planes) {
  if (bottleneck_) {
    conv1_ = register_module("conv1", conv(in_channels, planes, 1));
    bn1_ = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, stride, dilation, dilation));
    bn2_ = register_module("bn2", torch::nn::BatchNorm2d(planes));
    conv3_ = register_module("conv3", conv(planes, out_channels_, 1));
    bn3_ = register_module("bn3", torch::nn::BatchNorm2d(out_channels_));
  } else {
    conv1_ = register_module("conv1", conv(in_channels, planes, 3, stride, dilation, dilation));
    bn1_ = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, 1, dilation, dilation));
    bn2_ = register_module("bn2", torch::nn::BatchNorm2d(planes));
  }
  if (stride != 1 || in_channels != out_channels_) {
    down_conv_ = register_module("down_conv", conv(in_channels, out_channels_, 1, stride));
    down_bn_ = register_module("down_bn", torch::nn::BatchNorm2d(out_channels_));
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(nn_ops::run(conv1_, x)));
  if (bottleneck_) {
    y = torch::relu(bn2_(nn_ops::run(conv2_, y)));
    y = bn3_(nn_ops::run(conv3_, y));
  } else {
    y = bn2_(nn_ops::run(conv2_, y));
  }
  auto identity = down_conv_ ? down_bn_(nn_ops::run(down_conv_, x)) : x;
  return torch::relu(y + identity);
}

BackboneImpl::BackboneImpl(const EncoderConfig& cfg) {
  const auto blocks = stage_blocks(cfg.backbone_depth);
  const bool bottleneck = cfg.backbone_depth >= 50;
  const int w = cfg.base_width;
  stem_conv_ = register_module("stem_conv", conv(3, w, 7, 2, 3));
  stem_bn_ = register_module("stem_bn", torch::nn::BatchNorm2d(w));
  int in = w;
  layer1_ = register_module("layer1", make_stage(in, w, blocks[0], 1, 1, bottleneck));
  layer2_ = register_module("layer2", make_stage(in, 2 * w, blocks[1], 2, 1, bottleneck));
  layer3_ = register_module("layer3", make_stage(in, 4 * w, blocks[2], 1, 2, bottleneck));
  layer4_ = register_module("layer4", make_stage(in, 8 * w, blocks[3], 1, 4, bottleneck));
  kaiming_init(*this);
  // Zero the last BN of each residual branch so blocks start as identities.
  torch::NoGradGuard no_grad;
  for (auto& layer : {layer1_, layer2_, layer3_, layer4_})
    for (auto& block : layer->children()) {
      const auto params = block->named_parameters(/*recurse=*/true);
      const std::string last = bottleneck ? "bn3.weight" : "bn2.weight";
      if (auto* p = params.find(last)) p->zero_();
    }
}

torch::nn::Sequential BackboneImpl::make_stage(int& in_channels, int planes, int blocks, int stride, int dilation,
                                               bool bottleneck) {
  torch::nn::Sequential seq;
  // First block of a dilated stage uses half the dilation, as in DeepLab.
  const int first_dilation = dilation > 1 ? dilation / 2 : 1;
  ResidualBlock first(in_channels, planes, stride, first_dilation, bottleneck);
  in_channels = first->out_channels();
  seq->push_back(first);
  for (int b = 1; b < blocks; ++b) seq->push_back(ResidualBlock(in_channels, planes, 1, dilation, bottleneck));
  return seq;
}

std::pair<torch::Tensor, torch::Tensor> BackboneImpl::forward(const torch::Tensor& x) {
  check_encoder_input(x);
  auto y = torch::relu(stem_bn_(nn_ops::run(stem_conv_, x)));
  y = F::max_pool2d(y, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  y = layer1_->forward(y);
  auto f2 = layer2_->forward(y);
  auto f4 = layer4_->forward(layer3_->forward(f2));
  return {f2, f4};
}

AsppBranchImpl::AsppBranchImpl(int in_channels, int out_channels, int dilation) : dilation_(dilation) {
  // Rate 1 is the conventional 1x1 branch.
  conv_ = dilation == 1 ? register_module("conv", conv(in_channels, out_channels, 1))
                        : register_module("conv", conv(in_channels, out_channels, 3, 1, dilation, dilation));
  bn_ = register_module("bn", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor AsppBranchImpl::forward(const torch::Tensor& x) {
  torch::Tensor y;
  if (dilation_ > 1 && dilation_ >= x.size(2) && dilation_ >= x.size(3)) {
    // Every off-centre tap lands in padding; only the centre weight contributes.
    static std::once_flag warned;
    std::call_once(warned, [&] {
      log::warn("ASPP dilation " + std::to_string(dilation_) + " exceeds the " + std::to_string(x.size(2)) + "x" +
                std::to_string(x.size(3)) + " feature map; using its 1x1 centre tap");
    });
    auto centre = conv_->weight.slice(2, 1, 2).slice(3, 1, 2);
    y = torch::conv2d(x, centre);
    nn_ops::tally(static_cast<double>(y.numel()) * static_cast<double>(centre.size(1)));
  } else {
    y = nn_ops::run(conv_, x);
  }
  return torch::relu(bn_(y));
}

AsppImpl::AsppImpl(int in_channels, int out_channels, const std::vector<int>& dilations) {
  for (std::size_t i = 0; i < dilations.size(); ++i)
    branches_.push_back(
        register_module("branch" + std::to_string(i), AsppBranch(in_channels, out_channels, dilations[i])));
  pool_conv_ = register_module("pool_conv", conv(in_channels, out_channels, 1, 1, 0, 1, /*bias=*/true));
  const int concat = out_channels * static_cast<int>(dilations.size() + 1);
  project_conv_ = register_module("project_conv", conv(concat, out_channels, 1));
  project_bn_ = register_module("project_bn", torch::nn::BatchNorm2d(out_channels));
  kaiming_init(*this);
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> outs;
  outs.reserve(branches_.size() + 1);
  for (auto& b : branches_) outs.push_back(b->forward(x));
  auto pooled = torch::relu(nn_ops::run(pool_conv_, x.mean({2, 3}, /*keepdim=*/true)));
  outs.push_back(pooled.expand({-1, -1, x.size(2), x.size(3)}));
  return torch::relu(project_bn_(nn_ops::run(project_conv_, torch::cat(outs, 1))));
}

SqueezeExcitationImpl::SqueezeExcitationImpl(int channels, int reduction) {
  fc1 = register_module("fc1", torch::nn::Linear(channels, channels / reduction));
  fc2 = register_module("fc2", torch::nn::Linear(channels / reduction, channels));
}

torch::Tensor SqueezeExcitationImpl::gates(const torch::Tensor& x) {
  auto s = x.mean({2, 3});
  return torch::sigmoid(nn_ops::run(fc2, torch::relu(nn_ops::run(fc1, s))));
}

torch::Tensor SqueezeExcitationImpl::forward(const torch::Tensor& x) {
  return x * gates(x).unsqueeze(-1).unsqueeze(-1);
}

EncoderImpl::EncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  const auto [c2, c4] = stage_channels(cfg);
  backbone = register_module("backbone", Backbone(cfg));
  aspp = register_module("aspp", Aspp(c2 + c4, cfg.output_channels, cfg.aspp_dilations));
  se = register_module("se", SqueezeExcitation(cfg.output_channels, cfg.se_reduction));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  auto [f2, f4] = backbone->forward(x);
  return se->forward(aspp->forward(torch::cat({f2, f4}, 1)));
}

}  // namespace icssn
