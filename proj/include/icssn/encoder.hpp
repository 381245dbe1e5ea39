#pragma once

#include <utility>
#include <vector>

#include <torch/torch.h>

namespace icssn {

struct EncoderConfig {
  int backbone_depth = 101;  // 18, 50 or 101
  // Channel width of the first residual stage; 64 is the standard ResNet.
  int base_width = 64;
  int output_channels = 256;
  std::vector<int> aspp_dilations = {1, 6, 12, 18};
  int se_reduction = 16;
};

void validate(const EncoderConfig& cfg);

// Channels produced by residual stages 2 and 4 for this configuration.
std::pair<int, int> stage_channels(const EncoderConfig& cfg);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  // bottleneck=false gives the two-conv basic block.
  ResidualBlockImpl(int in_channels, int planes, int stride, int dilation, bool bottleneck);
  torch::Tensor forward(const torch::Tensor& x);

  int out_channels() const { return out_channels_; }

 private:
  bool bottleneck_;
  int out_channels_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr}, down_conv_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr}, down_bn_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Residual backbone with output stride 8: stages 3 and 4 replace striding by
// dilation so stage-4 features align with stage-2 features.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const EncoderConfig& cfg);
  // Returns (stage-2 features, stage-4 features), both at 1/8 resolution.
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential make_stage(int& in_channels, int planes, int blocks, int stride, int dilation,
                                   bool bottleneck);

  torch::nn::Conv2d stem_conv_{nullptr};
  torch::nn::BatchNorm2d stem_bn_{nullptr};
  torch::nn::Sequential layer1_{nullptr}, layer2_{nullptr}, layer3_{nullptr}, layer4_{nullptr};
};
TORCH_MODULE(Backbone);

class AsppBranchImpl : public torch::nn::Module {
 public:
  AsppBranchImpl(int in_channels, int out_channels, int dilation);
  torch::Tensor forward(const torch::Tensor& x);

  int dilation() const { return dilation_; }

 private:
  int dilation_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(AsppBranch);

// Parallel dilated convolutions plus an image-pooling branch, concatenated and
// projected back to the configured channel count.
class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int in_channels, int out_channels, const std::vector<int>& dilations);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<AsppBranch> branches_;
  torch::nn::Conv2d pool_conv_{nullptr};
  torch::nn::Conv2d project_conv_{nullptr};
  torch::nn::BatchNorm2d project_bn_{nullptr};
};
TORCH_MODULE(Aspp);

// Squeeze-and-excitation channel recalibration.
class SqueezeExcitationImpl : public torch::nn::Module {
 public:
  SqueezeExcitationImpl(int channels, int reduction);
  torch::Tensor forward(const torch::Tensor& x);
  // Per-channel gates in (0,1), shape B x C.
  torch::Tensor gates(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(SqueezeExcitation);

// backbone -> concat(stage 2, stage 4) -> ASPP -> SE. Output stride 8.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  const EncoderConfig& config() const { return cfg_; }

  Backbone backbone{nullptr};
  Aspp aspp{nullptr};
  SqueezeExcitation se{nullptr};

 private:
  EncoderConfig cfg_;
};
TORCH_MODULE(Encoder);

// Throws ShapeError unless x is B x 3 x H x W with H and W divisible by 8.
void check_encoder_input(const torch::Tensor& x);

}  // namespace icssn
