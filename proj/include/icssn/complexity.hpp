#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace icssn {

// Multiply-accumulate tally for conv / transposed-conv / linear layers. Only
// active inside a MacCountingScope on the current thread.
class MacCountingScope {
 public:
  MacCountingScope();
  ~MacCountingScope();
  MacCountingScope(const MacCountingScope&) = delete;
  MacCountingScope& operator=(const MacCountingScope&) = delete;

  double macs() const;
};

namespace nn_ops {

torch::Tensor run(torch::nn::Conv2d& conv, const torch::Tensor& x);
torch::Tensor run(torch::nn::ConvTranspose2d& conv, const torch::Tensor& x);
torch::Tensor run(torch::nn::Linear& fc, const torch::Tensor& x);
// Adds an externally computed MAC count (used for layers run through torch::conv2d directly).
void tally(double macs);

}  // namespace nn_ops

std::int64_t count_parameters(const torch::nn::Module& module, bool trainable_only = false);

}  // namespace icssn
