#include <doctest.h>

#include "icssn/complexity.hpp"
#include "icssn/encoder.hpp"
#include "icssn/errors.hpp"

using namespace icssn;

namespace {

EncoderConfig small() {
  EncoderConfig c;
  c.backbone_depth = 18;
  c.base_width = 16;
  c.output_channels = 64;
  c.aspp_dilations = {1, 3, 6, 9};
  return c;
}

}  // namespace

TEST_CASE("encoder output stride is 8") {
  torch::manual_seed(0);
  Encoder enc(small());
  enc->eval();
  torch::NoGradGuard no_grad;
  CHECK(enc->forward(torch::randn({1, 3, 128, 128})).sizes() == torch::IntArrayRef({1, 64, 16, 16}));
  CHECK(enc->forward(torch::randn({1, 3, 512, 512})).sizes() == torch::IntArrayRef({1, 64, 64, 64}));
  CHECK(enc->forward(torch::randn({2, 3, 64, 96})).sizes() == torch::IntArrayRef({2, 64, 8, 12}));
}

TEST_CASE("backbone stages share a resolution") {
  torch::manual_seed(0);
  Backbone bb(small());
  bb->eval();
  torch::NoGradGuard no_grad;
  auto [f2, f4] = bb->forward(torch::randn({1, 3, 128, 128}));
  const auto [c2, c4] = stage_channels(small());
  CHECK(f2.sizes() == torch::IntArrayRef({1, c2, 16, 16}));
  CHECK(f4.sizes() == torch::IntArrayRef({1, c4, 16, 16}));
  EncoderConfig d;
  CHECK(stage_channels(d) == std::pair<int, int>{512, 2048});
}

TEST_CASE("encoder input contract") {
  CHECK_THROWS_AS(check_encoder_input(torch::zeros({1, 3, 100, 128})), ShapeError);
  CHECK_THROWS_AS(check_encoder_input(torch::zeros({1, 1, 128, 128})), ShapeError);
  CHECK_THROWS_AS(check_encoder_input(torch::zeros({3, 128, 128})), ShapeError);
  CHECK_NOTHROW(check_encoder_input(torch::zeros({2, 3, 64, 64})));
  EncoderConfig bad = small();
  bad.backbone_depth = 34;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("squeeze-excitation gates") {
  torch::manual_seed(1);
  SqueezeExcitation se(32, 8);
  auto x = torch::randn({2, 32, 5, 5});
  auto g = se->gates(x);
  CHECK(g.sizes() == torch::IntArrayRef({2, 32}));
  CHECK(g.gt(0).all().item<bool>());
  CHECK(g.lt(1).all().item<bool>());
  auto y = se->forward(x);
  CHECK(torch::allclose(y, x * g.unsqueeze(-1).unsqueeze(-1)));
  CHECK((y.flatten(2).norm(2, 2) < x.flatten(2).norm(2, 2)).all().item<bool>());

  {
    torch::NoGradGuard no_grad;
    for (auto& p : se->parameters()) p.zero_();
  }
  CHECK(torch::equal(se->gates(x), torch::full({2, 32}, 0.5f)));
  CHECK(torch::equal(se->forward(x), x / 2));
}

TEST_CASE("aspp channel bookkeeping and linearity") {
  torch::manual_seed(2);
  Aspp aspp(48, 16, std::vector<int>{1, 2, 4, 6});
  aspp->eval();
  torch::NoGradGuard no_grad;
  CHECK(aspp->forward(torch::randn({1, 48, 9, 7})).sizes() == torch::IntArrayRef({1, 16, 9, 7}));
  CHECK(aspp->forward(torch::zeros({1, 48, 8, 8})).abs().max().item<float>() == 0.0f);
}

TEST_CASE("aspp dilation larger than the feature map uses the centre tap") {
  torch::manual_seed(3);
  AsppBranch b(4, 4, 12);
  b->eval();
  torch::NoGradGuard no_grad;
  auto x = torch::randn({1, 4, 6, 6});
  auto y = b->forward(x);
  CHECK(y.sizes() == torch::IntArrayRef({1, 4, 6, 6}));
  // same result as the padded full convolution
  auto params = b->named_parameters();
  auto full = torch::conv2d(x, params["conv.weight"], {}, 1, 12, 12);
  auto expected = torch::relu(full / std::sqrt(1.0 + 1e-5));
  CHECK(torch::allclose(y, expected, 1e-5, 1e-6));
}

TEST_CASE("encoder determinism and weight sharing") {
  torch::manual_seed(4);
  Encoder a(small());
  torch::manual_seed(99);
  Encoder b(small());
  {
    torch::NoGradGuard no_grad;
    auto pa = a->named_parameters(true), pb = b->named_parameters(true);
    for (auto& kv : pa) pb[kv.key()].copy_(kv.value());
    auto ba = a->named_buffers(true), bb = b->named_buffers(true);
    for (auto& kv : ba) bb[kv.key()].copy_(kv.value());
  }
  a->eval();
  b->eval();
  torch::NoGradGuard no_grad;
  auto x = torch::randn({1, 3, 64, 64});
  auto y = a->forward(x);
  CHECK(torch::equal(y, a->forward(x)));
  CHECK(torch::equal(y, b->forward(x)));
}

TEST_CASE("mac counting") {
  torch::nn::Conv2d conv(torch::nn::Conv2dOptions(3, 8, 3).padding(1).bias(false));
  MacCountingScope scope;
  nn_ops::run(conv, torch::zeros({1, 3, 10, 10}));
  CHECK(scope.macs() == doctest::Approx(8.0 * 100 * 3 * 9));
  CHECK(count_parameters(*conv) == 8 * 3 * 9);
}
