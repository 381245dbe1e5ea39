#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "icssn/checkpoint.hpp"
#include "icssn/errors.hpp"
#include "icssn/orchestrator.hpp"
#include "icssn/tensors.hpp"

using namespace icssn;
namespace fs = std::filesystem;

namespace {

Config tiny_config() {
  Config c;
  c.data.tile_size = 32;
  c.data.augmentations = 0;
  c.synth.tile_size = 32;
  c.synth.landslide_count = 8;
  c.synth.slope_count = 8;
  c.synth.min_radius = 5;
  c.synth.max_radius = 9;
  c.synth.rim_width = 2;
  c.encoder.backbone_depth = 18;
  c.encoder.base_width = 8;
  c.encoder.output_channels = 16;
  c.encoder.aspp_dilations = {1, 2};
  c.encoder.se_reduction = 4;
  c.classifier.hidden_units = 8;
  c.segmentation.n_pos = 16;
  c.segmentation.n_neg = 16;
  c.training.lr_classification = 0.01;
  c.training.lr_segmentation = 0.02;
  c.training.epochs_classification = 2;
  c.training.epochs_segmentation = 2;
  c.training.epochs_warmup = 1;
  c.training.max_rounds = 1;
  c.training.patience = 2;
  return c;
}

SplitSamples tiny_data(const Config& c) {
  const auto samples = generate_synthetic_dataset(c.synth, 1);
  return prepare_splits(samples, split_dataset(samples, c.data.split, 1), true, 0);
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("icssn_orch_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("convergence criterion") {
  ConvergenceCriterion c(1, 0.0);
  CHECK(c.update(1.0));
  CHECK_FALSE(c.converged());
  CHECK_FALSE(c.update(2.0));
  CHECK(c.converged());
  CHECK(c.best() == 1.0);
  CHECK(c.best_epoch() == 0);

  ConvergenceCriterion d(2, 0.1);
  CHECK(d.update(1.0));
  CHECK_FALSE(d.update(0.95));  // inside min_delta
  CHECK(d.update(0.8));
  CHECK(d.best_epoch() == 2);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0.1, 0, 10) == doctest::Approx(0.1));
  CHECK(cosine_lr(0.1, 5, 10) == doctest::Approx(0.05));
  CHECK(cosine_lr(0.1, 10, 10) == doctest::Approx(0.0));
  for (int e = 1; e < 10; ++e) CHECK(cosine_lr(0.1, e, 10) < cosine_lr(0.1, e - 1, 10));
}

TEST_CASE("worsening losses stop after patience epochs") {
  ConvergenceCriterion c(1, 1e-4);
  int epochs = 0;
  for (double v : {0.9, 1.0, 1.1, 1.2}) {
    ++epochs;
    c.update(v);
    if (c.converged()) break;
  }
  CHECK(epochs == 2);
}

TEST_CASE("warm-up leaves the encoder untouched") {
  const auto cfg = tiny_config();
  const auto data = tiny_data(cfg);
  IcssnModel model(cfg);
  PhaseOptions po;
  po.branch = Branch::segmentation;
  po.phase = Phase::warmup;
  po.freeze_encoder = true;
  po.epoch_cap = 1;
  const auto enc = encoder_hash(*model.segmentation);
  const auto head = tensor_hash(capture(*model.segmentation->decoder).tensors.begin()->second);
  train_branch(model, data, cfg, po);
  CHECK(encoder_hash(*model.segmentation) == enc);
  CHECK(tensor_hash(capture(*model.segmentation->decoder).tensors.begin()->second) != head);
  for (auto& p : model.segmentation->parameters()) CHECK(p.requires_grad());

  po.phase = Phase::joint;
  po.freeze_encoder = false;
  train_branch(model, data, cfg, po);
  CHECK(encoder_hash(*model.segmentation) != enc);
}

TEST_CASE("one round follows the step order and is reproducible") {
  const auto cfg = tiny_config();
  const auto data = tiny_data(cfg);
  const auto out = scratch("round");
  RunOptions ro;
  ro.out_dir = out;
  const auto a = run_iterative_training(data, cfg, ro);
  CHECK(a.rounds_completed == 1);
  CHECK(a.stop_reason == "max_rounds");
  const auto& steps = a.round_log["rounds"][0]["steps"];
  REQUIRE(steps.size() == kRoundSteps.size());
  for (std::size_t k = 0; k < kRoundSteps.size(); ++k) CHECK(steps[k]["name"] == std::string(kRoundSteps[k]));
  CHECK(steps[1]["encoders_identical"] == true);
  CHECK(steps[4]["encoders_identical"] == true);
  CHECK(steps[2]["encoder_hash_before"] == steps[2]["encoder_hash_after"]);
  CHECK(steps[5]["encoder_hash_before"] == steps[5]["encoder_hash_after"]);
  CHECK(steps[0]["encoder_hash_before"] != steps[0]["encoder_hash_after"]);
  CHECK(fs::exists(out / "rounds.json"));
  CHECK(fs::exists(out / "checkpoints" / "state.json"));
  CHECK(a.round_log["rounds"][0]["test_metrics"].contains("segmentation"));

  RunOptions quiet;
  quiet.evaluate_test = false;
  const auto b = run_iterative_training(data, cfg, quiet);
  CHECK(encoder_hash(b.segmentation) == encoder_hash(a.segmentation));
  CHECK(encoder_hash(b.classification) == encoder_hash(a.classification));
}

TEST_CASE("resume after an interruption matches an uninterrupted run") {
  const auto cfg = tiny_config();
  const auto data = tiny_data(cfg);
  RunOptions plain;
  plain.evaluate_test = false;
  const auto full = run_iterative_training(data, cfg, plain);

  const auto out = scratch("resume");
  RunOptions ro;
  ro.out_dir = out;
  ro.evaluate_test = false;
  int seg_joint_epochs = 0;
  ro.on_epoch = [&](const EpochRecord&) {
    // interrupt inside the segmentation joint phase (step 4)
    if (++seg_joint_epochs == 2 + 1 + 1) throw std::runtime_error("interrupted");
  };
  CHECK_THROWS_WITH(run_iterative_training(data, cfg, ro), "interrupted");
  std::ifstream in(out / "checkpoints" / "state.json");
  const auto state = nlohmann::json::parse(in);
  CHECK(state["next_step"] == 3);

  RunOptions again;
  again.out_dir = out;
  again.resume = out / "checkpoints";
  again.evaluate_test = false;
  const auto resumed = run_iterative_training(data, cfg, again);
  CHECK(resumed.rounds_completed == 1);
  CHECK(resumed.round_log["rounds"][0]["steps"].size() == kRoundSteps.size());
  CHECK(encoder_hash(resumed.segmentation) == encoder_hash(full.segmentation));
  CHECK(encoder_hash(resumed.classification) == encoder_hash(full.classification));

  auto other = cfg;
  other.segmentation.lambda = 0.5;
  CHECK_THROWS_AS(run_iterative_training(data, other, again), CheckpointError);
}

TEST_CASE("complexity report") {
  const auto r = measure_complexity(tiny_config(), 32);
  CHECK(r.segmentation.parameters > 0);
  CHECK(r.segmentation.trainable == r.segmentation.parameters);
  CHECK(r.segmentation.macs > 0);
  const auto j = to_json(r);
  CHECK(j["segmentation"]["gflops"].get<double>() == doctest::Approx(2 * r.segmentation.macs / 1e9));
}
