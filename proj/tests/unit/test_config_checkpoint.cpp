#include <doctest.h>

#include <filesystem>

#include "icssn/checkpoint.hpp"
#include "icssn/classification.hpp"
#include "icssn/config.hpp"
#include "icssn/errors.hpp"
#include "icssn/segmentation.hpp"

using namespace icssn;
namespace fs = std::filesystem;

namespace {

EncoderConfig small() {
  EncoderConfig c;
  c.backbone_depth = 18;
  c.base_width = 8;
  c.output_channels = 16;
  c.aspp_dilations = {1, 2};
  c.se_reduction = 4;
  return c;
}

ClassifierConfig head() {
  ClassifierConfig c;
  c.hidden_units = 8;
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("icssn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config defaults") {
  const Config c;
  CHECK(c.training.lr_classification == 0.001);
  CHECK(c.training.lr_segmentation == 0.007);
  CHECK(c.training.momentum == 0.9);
  CHECK(c.training.weight_decay == 0.0005);
  CHECK(c.training.batch_size == 4);
  CHECK(c.training.epochs_classification == 50);
  CHECK(c.training.epochs_segmentation == 100);
  CHECK(c.segmentation.n_pos == 64);
  CHECK(c.segmentation.thresholds.lo == 7);
  CHECK(c.segmentation.thresholds.hi == 57);
  CHECK(c.encoder.output_channels == 256);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("config parsing") {
  const auto c = parse_config(
      "# comment\n[encoder]\nbackbone_depth = 50\naspp_dilations = 1, 2, 3\n"
      "[socl]\nstrategy = center\n[training]\nseed = 17\ndeterministic = false\n[data]\nsplit = 8:1:1\n");
  CHECK(c.encoder.backbone_depth == 50);
  CHECK(c.encoder.aspp_dilations == std::vector<int>{1, 2, 3});
  CHECK(c.segmentation.strategy == BlockStrategy::center);
  CHECK(c.training.seed == 17);
  CHECK_FALSE(c.training.deterministic);
  CHECK(c.data.split.train == 8);

  CHECK_THROWS_AS(parse_config("[encoder]\nwidth = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nonsense]\na = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[training]\nbatch_size = four\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[training]\nbatch_size = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[data]\ntile_size = 100\n"), ConfigError);
}

TEST_CASE("config round trip and hash") {
  Config c;
  c.segmentation.lambda = 0.25;
  c.encoder.aspp_dilations = {1, 3};
  c.training.max_rounds = 2;
  const auto back = parse_config(to_ini(c));
  CHECK(to_ini(back) == to_ini(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);
  c.segmentation.lambda = 0.3;
  CHECK(config_hash(back) != config_hash(c));

  const auto dir = scratch("cfg");
  save_config(c, dir / "c.ini");
  CHECK(to_ini(load_config(dir / "c.ini")) == to_ini(c));
  CHECK_THROWS_AS(load_config(dir / "missing.ini"), ConfigError);
}

TEST_CASE("checkpoint save and load") {
  torch::manual_seed(0);
  SegmentationNet net(small());
  CheckpointMeta meta;
  meta.branch = "segmentation";
  meta.round = 2;
  meta.phase = "joint";
  meta.val_metrics = {{"loss", 0.5}};
  const auto ck = capture(*net, meta);
  CHECK(ck.tensors.count("encoder/se/fc1/weight") + ck.tensors.count("encoder/se/fc1.weight") == 1);

  const auto dir = scratch("ckpt");
  save_checkpoint(ck, dir / "s.pt");
  const auto back = load_checkpoint(dir / "s.pt");
  CHECK(back.meta.round == 2);
  CHECK(back.meta.val_metrics["loss"] == 0.5);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (const auto& [k, v] : ck.tensors) CHECK(torch::equal(v, back.tensors.at(k)));

  torch::manual_seed(5);
  SegmentationNet other(small());
  CHECK(encoder_hash(*other) != encoder_hash(*net));
  restore(*other, back);
  CHECK(encoder_hash(*other) == encoder_hash(*net));
  CHECK_THROWS_AS(load_checkpoint(dir / "nothing.pt"), CheckpointError);
}

TEST_CASE("restore rejects structural mismatch") {
  torch::manual_seed(0);
  SegmentationNet net(small());
  auto other_cfg = small();
  other_cfg.output_channels = 24;
  SegmentationNet wider(other_cfg);
  CHECK_THROWS_AS(restore(*wider, capture(*net)), CheckpointError);
}

TEST_CASE("encoder transfer") {
  torch::manual_seed(1);
  ClassificationNet cls(small(), head());
  torch::manual_seed(2);
  SegmentationNet seg(small());
  const auto head_before = capture(*seg->decoder);
  CHECK_FALSE(encoder_differences(*cls, *seg).empty());

  transfer_encoder(*cls, *seg);
  CHECK(encoder_differences(*cls, *seg).empty());
  CHECK(encoder_hash(*cls) == encoder_hash(*seg));
  // decoder untouched
  const auto head_after = capture(*seg->decoder);
  for (const auto& [k, v] : head_before.tensors) CHECK(torch::equal(v, head_after.tensors.at(k)));
  // idempotent
  const auto h = encoder_hash(*seg);
  transfer_encoder(*cls, *seg);
  CHECK(encoder_hash(*seg) == h);

  auto wide = small();
  wide.output_channels = 32;
  SegmentationNet mismatched(wide);
  CHECK_THROWS_AS(transfer_encoder(*cls, *mismatched), CheckpointError);
}

TEST_CASE("encoder hash covers buffers") {
  torch::manual_seed(3);
  SegmentationNet net(small());
  const auto h = encoder_hash(*net);
  {
    torch::NoGradGuard no_grad;
    net->named_buffers(true).begin()->value().add_(1.0);
  }
  CHECK(encoder_hash(*net) != h);
}
