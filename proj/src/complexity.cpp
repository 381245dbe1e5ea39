#include "icssn/complexity.hpp"

namespace icssn {
namespace {

thread_local int t_depth = 0;
thread_local double t_macs = 0.0;

}  // namespace

MacCountingScope::MacCountingScope() {
  if (t_depth++ == 0) t_macs = 0.0;
}

MacCountingScope::~MacCountingScope() { --t_depth; }

double MacCountingScope::macs() const { return t_macs; }

namespace nn_ops {

void tally(double macs) {
  if (t_depth > 0) t_macs += macs;
}

torch::Tensor run(torch::nn::Conv2d& conv, const torch::Tensor& x) {
  auto y = conv->forward(x);
  if (t_depth > 0) {
    const auto& w = conv->weight;  // out, in/groups, kh, kw
    tally(static_cast<double>(y.numel()) * static_cast<double>(w.size(1) * w.size(2) * w.size(3)));
  }
  return y;
}

torch::Tensor run(torch::nn::ConvTranspose2d& conv, const torch::Tensor& x) {
  auto y = conv->forward(x);
  if (t_depth > 0) {
    const auto& w = conv->weight;  // in, out/groups, kh, kw
    tally(static_cast<double>(x.numel()) * static_cast<double>(w.size(1) * w.size(2) * w.size(3)));
  }
  return y;
}

torch::Tensor run(torch::nn::Linear& fc, const torch::Tensor& x) {
  auto y = fc->forward(x);
  if (t_depth > 0) tally(static_cast<double>(y.numel()) * static_cast<double>(fc->weight.size(1)));
  return y;
}

}  // namespace nn_ops

std::int64_t count_parameters(const torch::nn::Module& module, bool trainable_only) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters())
    if (!trainable_only || p.requires_grad()) n += p.numel();
  return n;
}

}  // namespace icssn
