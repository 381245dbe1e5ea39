// Acceptance suite. Each criterion prints one line:
//   [criterion N] PASS|FAIL  <details>
// Criterion 7 is reported only; its line never affects the exit code.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "icssn/checkpoint.hpp"
#include "icssn/config.hpp"
#include "icssn/data.hpp"
#include "icssn/dataset_io.hpp"
#include "icssn/explainability.hpp"
#include "icssn/log.hpp"
#include "icssn/metrics.hpp"
#include "icssn/orchestrator.hpp"
#include "icssn/segmentation.hpp"
#include "icssn/tensors.hpp"
#include "oracles.hpp"

using namespace icssn;

namespace {

// Pinned tolerances and budgets.
constexpr int kSoclMasks = 1000;
constexpr double kSoclSeconds = 60.0;
constexpr int kLossBatches = 100;
constexpr double kLossRel = 1e-6;
constexpr double kHandCase = 0.126928;
constexpr double kLog2 = 0.693147;
constexpr double kSixDecimals = 5e-7;
constexpr double kGradRel = 1e-4;
constexpr int kMetricPairs = 200;
constexpr double kStructuralSeconds = 300.0;
constexpr int kSmokeTrain = 240, kSmokeVal = 80, kSmokeTest = 80;
constexpr int kSmokeHit = 25, kSmokeFp = 6;
constexpr int kSmokeRounds = 2;
constexpr int kSmokeEpochCap = 5;
constexpr double kSmokeIou = 0.5;
constexpr double kSmokeAccuracy = 0.9;
constexpr double kSmokeSeconds = 30 * 60.0;
constexpr double kParamsLo = 40e6, kParamsHi = 90e6;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(int n, const Outcome& o, bool soft = false) {
  std::printf("[criterion %d] %s  %s%s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
              soft ? " (soft: reported, not gated)" : "");
  std::fflush(stdout);
}

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

torch::Tensor unit_rows(std::int64_t n, std::int64_t d, torch::Generator& gen) {
  auto t = torch::randn({n, d}, gen, torch::kFloat64);
  return t / t.norm(2, 1, true);
}

// ---------------------------------------------------------------- 1
Outcome socl_labels() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, blocks = 0;
  for (int k = 0; k < kSoclMasks; ++k) {
    const auto m = oracle::random_mask(512, 512, rng);
    const auto g = derive_socl_labels(m);
    const auto counts = oracle::block_counts(m, 8);
    if (g.rows != 64 || g.cols != 64) return {false, "grid is not 64x64"};
    for (std::size_t i = 0; i < counts.size(); ++i) mismatches += g.labels[i] != oracle::label_for_count(counts[i]);
    blocks += counts.size();
  }
  int count_ok = 0;
  for (int n = 0; n <= 64; ++n) {
    Mask b(8, 8);
    for (int i = 0; i < n; ++i) b.labels[static_cast<std::size_t>(i)] = 1;
    const auto want = n <= 6 ? SoclLabel::negative : n <= 57 ? SoclLabel::positive : SoclLabel::irrelevant;
    count_ok += derive_socl_labels(b).at(0, 0) == want;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && count_ok == 65 && secs < kSoclSeconds,
          fmt("%zu mismatches over %zu blocks of %d masks; %d/65 counts; %.1f s (limit %.0f)", mismatches, blocks,
              kSoclMasks, count_ok, secs, kSoclSeconds)};
}

// ---------------------------------------------------------------- 2
Outcome loss_oracles() {
  torch::Generator gen = at::detail::createCPUGenerator(7);
  std::mt19937_64 rng(7);
  double worst = 0.0;
  int checked = 0;
  for (int k = 0; k < kLossBatches; ++k) {
    SoclPairBatch b;
    if (k % 2 == 0) {
      // free-form batch: <= 8 anchors, <= 4 positives, <= 4 negatives, dim 16
      std::uniform_int_distribution<int> na(1, 8), np(1, 4), nn(0, 4);
      const int A = na(rng), P = np(rng), N = nn(rng);
      b.anchors = unit_rows(A, 16, gen);
      b.positives = unit_rows(P, 16, gen);
      b.negatives = N ? unit_rows(N, 16, gen) : torch::zeros({0, 16}, torch::kFloat64);
      auto mask = torch::rand({A, P}, gen, torch::kFloat64) < 0.5;
      for (int i = 0; i < A; ++i) mask[i][static_cast<std::int64_t>(rng() % P)] = true;
      b.positive_mask = mask;
      b.tau = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    } else {
      // batch drawn by the block sampler from a random mask
      const auto m = oracle::random_mask(32, 32, rng);
      SegLossConfig cfg;
      cfg.n_pos = 4;
      cfg.n_neg = 4;
      b = select_socl_pairs(torch::randn({1, 16, 4, 4}, gen, torch::kFloat64), {derive_socl_labels(m)}, cfg, rng());
      if (b.empty) continue;
    }
    const double got = supervised_contrastive_loss(b).value.item<double>();
    worst = std::max(worst, rel_err(got, oracle::contrastive(b)));
    ++checked;
  }

  SoclPairBatch h;
  h.anchors = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
  h.positives = h.anchors;
  h.negatives = torch::tensor({{-1.0, 0.0}}, torch::kFloat64);
  h.positive_mask = torch::ones({1, 1}, torch::kBool);
  h.tau = 1.0;
  const double hand = supervised_contrastive_loss(h).value.item<double>();

  auto mask = torch::randint(0, 2, {2, 8, 8}, gen, torch::kInt64);
  const double ce = pixel_cross_entropy(torch::zeros({2, 2, 8, 8}, torch::kFloat64), mask).item<double>();

  const bool ok = checked >= kLossBatches / 2 && worst <= kLossRel && std::abs(hand - kHandCase) < kSixDecimals &&
                  std::abs(ce - kLog2) < kSixDecimals;
  return {ok, fmt("%d batches, worst rel %.2e (limit %.0e); hand case %.6f; uniform CE %.6f", checked, worst, kLossRel,
                  hand, ce)};
}

// ---------------------------------------------------------------- 3
Outcome gradient_checks() {
  torch::Generator gen = at::detail::createCPUGenerator(3);
  std::map<std::string, double> errs;

  {
    auto raw_a = torch::randn({4, 6}, gen, torch::kFloat64);
    auto raw_n = torch::randn({3, 6}, gen, torch::kFloat64);
    auto pm = torch::ones({4, 4}, torch::kBool).logical_xor(torch::eye(4, torch::kBool));
    auto loss = [&](const torch::Tensor& a, const torch::Tensor& n) {
      SoclPairBatch b;
      b.anchors = a / a.norm(2, 1, true);
      b.positives = b.anchors;
      b.negatives = n / n.norm(2, 1, true);
      b.positive_mask = pm;
      b.tau = 0.2;
      return supervised_contrastive_loss(b).value;
    };
    auto a = raw_a.clone().requires_grad_(true), n = raw_n.clone().requires_grad_(true);
    loss(a, n).backward();
    errs["contrastive/anchors"] =
        oracle::fd_rel_error([&](const torch::Tensor& x) { return loss(x, raw_n); }, raw_a, a.grad());
    errs["contrastive/negatives"] =
        oracle::fd_rel_error([&](const torch::Tensor& x) { return loss(raw_a, x); }, raw_n, n.grad());
  }
  {
    auto logits = torch::randn({2, 2, 6, 6}, gen, torch::kFloat64);
    auto mask = torch::randint(0, 2, {2, 6, 6}, gen, torch::kInt64);
    auto x = logits.clone().requires_grad_(true);
    pixel_cross_entropy(x, mask).backward();
    errs["cross_entropy"] = oracle::fd_rel_error(
        [&](const torch::Tensor& l) { return pixel_cross_entropy(l, mask); }, logits, x.grad());
  }
  {
    Mask m(8, 8);
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 6; ++x) m.at(y, x) = 1;
    SegLossConfig cfg;
    cfg.lambda = 0.5;
    cfg.tau = 0.3;
    cfg.thresholds = {2, 1, 3};
    const std::vector<const Mask*> masks = {&m};
    auto logits = torch::randn({1, 2, 8, 8}, gen, torch::kFloat64);
    auto feats = torch::randn({1, 5, 4, 4}, gen, torch::kFloat64);
    auto l = logits.clone().requires_grad_(true), f = feats.clone().requires_grad_(true);
    auto out = segmentation_loss(l, masks, f, cfg, 11);
    if (out.contrastive_empty) return {false, "segmentation_loss instance had an empty contrastive term"};
    out.total.backward();
    errs["segmentation/logits"] = oracle::fd_rel_error(
        [&](const torch::Tensor& x) { return segmentation_loss(x, masks, feats, cfg, 11).total; }, logits, l.grad());
    errs["segmentation/features"] = oracle::fd_rel_error(
        [&](const torch::Tensor& x) { return segmentation_loss(logits, masks, x, cfg, 11).total; }, feats, f.grad());
  }
  double worst = 0.0;
  std::string detail;
  for (const auto& [k, v] : errs) {
    worst = std::max(worst, v);
    detail += fmt("%s %.1e; ", k.c_str(), v);
  }
  return {worst <= kGradRel, detail + fmt("limit %.0e", kGradRel)};
}

// ---------------------------------------------------------------- 4
Outcome metrics_oracle() {
  std::mt19937_64 rng(4);
  int exact = 0;
  auto ratio = [](std::uint64_t n, std::uint64_t d, bool absent) {
    return d == 0 ? (absent ? 1.0 : 0.0) : static_cast<double>(n) / static_cast<double>(d);
  };
  for (int k = 0; k < kMetricPairs; ++k) {
    auto pred = oracle::random_mask(64, 64, rng), truth = oracle::random_mask(64, 64, rng);
    if (k % 20 == 0) pred = Mask(64, 64);  // exercise the empty-prediction path
    const auto c = oracle::confusion(pred, truth);
    const auto got_c = confusion_counts(pred, truth);
    const auto m = pixel_metrics(got_c);
    const bool no_l = c.tp + c.fp + c.fn == 0, no_s = c.tn + c.fp + c.fn == 0;
    const double pa = ratio(c.tp + c.tn, c.total(), c.total() == 0);
    const double p = ratio(c.tp, c.tp + c.fp, no_l), r = ratio(c.tp, c.tp + c.fn, no_l);
    const double iou_l = ratio(c.tp, c.tp + c.fp + c.fn, no_l), iou_s = ratio(c.tn, c.tn + c.fn + c.fp, no_s);
    const double f1 = p + r > 0 ? 2.0 * p * r / (p + r) : (no_l ? 1.0 : 0.0);
    exact += got_c == c && m.pa == pa && m.precision == p && m.recall == r && m.landslide_iou == iou_l &&
             m.slope_iou == iou_s && m.miou == 0.5 * (iou_l + iou_s) && m.f1 == f1;
  }
  const double avg = average_accuracy(0.90, 0.78);
  const bool identity = std::abs(avg - 0.84) < 1e-12;
  return {exact == kMetricPairs && identity,
          fmt("%d/%d pairs exact; (0.90 + 0.78) / 2 = %.2f", exact, kMetricPairs, avg)};
}

// ---------------------------------------------------------------- 5
Outcome structural() {
  const auto t0 = Clock::now();
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  const Config cfg;  // default architecture
  IcssnModel model(cfg);
  model.segmentation->eval();
  model.classification->eval();
  {
    torch::NoGradGuard no_grad;
    auto x = torch::randn({1, 3, 512, 512});
    auto out = model.segmentation->forward_full(x);
    expect(out.features.sizes() == torch::IntArrayRef({1, cfg.encoder.output_channels, 64, 64}),
           "encoder 512 -> 64x64xC");
    expect(out.logits.sizes() == torch::IntArrayRef({1, 2, 512, 512}), "decoder -> 512x512x2");

    auto y = torch::randn({1, 3, 128, 128});
    auto pair = model.classification->forward_full(y, y.clone());
    expect(torch::equal(pair.features_a, pair.features_b), "siamese features bit-identical");
  }

  // Warm-up phases on a few small tiles with the default architecture.
  Config small = cfg;
  small.synth.tile_size = 64;
  small.synth.landslide_count = 4;
  small.synth.slope_count = 4;
  small.synth.min_radius = 8;
  small.synth.max_radius = 14;
  small.data.tile_size = 64;
  SplitSamples data;
  const auto samples = generate_synthetic_dataset(small.synth, 5);
  data.train = samples;
  data.val = {samples.front(), samples.back()};
  for (auto b : {Branch::segmentation, Branch::classification}) {
    PhaseOptions po;
    po.branch = b;
    po.phase = Phase::warmup;
    po.freeze_encoder = true;
    po.epoch_cap = 1;
    const auto before = encoder_hash(model.module(b));
    train_branch(model, data, small, po);
    expect(encoder_hash(model.module(b)) == before, std::string(to_string(b)) + " warm-up keeps encoder hash");
  }

  transfer_encoder(*model.classification, *model.segmentation);
  expect(encoder_differences(*model.classification, *model.segmentation).empty() &&
             encoder_hash(*model.classification) == encoder_hash(*model.segmentation),
         "transfer classification->segmentation bit-identical");
  const double secs = seconds_since(t0);
  expect(secs < kStructuralSeconds, "runtime");
  std::string detail = fmt("C=%d; %.1f s (limit %.0f)", cfg.encoder.output_channels, secs, kStructuralSeconds);
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------- 6 and 7

Config smoke_config() { return load_config(ICSSN_CONFIG_DIR "/smoke.ini"); }

SplitSamples synth_splits(const Config& cfg, std::uint64_t seed) {
  const auto samples = generate_synthetic_dataset(cfg.synth, seed);
  const auto manifest = split_dataset(samples, cfg.data.split, seed);
  return prepare_splits(samples, manifest, cfg.data.equalize, cfg.data.augmentations);
}

struct SmokeRun {
  RunResult run;
  SegmentationReport seg;
  BinaryMetrics cls;
  double seconds = 0.0;
};

SmokeRun smoke_run(const SplitSamples& data, const Config& cfg) {
  SmokeRun s;
  const auto t0 = Clock::now();
  RunOptions ro;
  ro.max_rounds = kSmokeRounds;
  s.run = run_iterative_training(data, cfg, ro);
  IcssnModel model(cfg);
  restore(*model.segmentation, s.run.segmentation);
  restore(*model.classification, s.run.classification);
  s.seg = evaluate_segmentation(model.segmentation, data.test, cfg.object_rule);
  s.cls = evaluate_classification(model.classification, data.test);
  s.seconds = seconds_since(t0);
  return s;
}

bool phase_order_ok(const nlohmann::json& rlog, int rounds) {
  if (static_cast<int>(rlog["rounds"].size()) != rounds) return false;
  for (const auto& r : rlog["rounds"]) {
    if (r["steps"].size() != kRoundSteps.size()) return false;
    for (std::size_t k = 0; k < kRoundSteps.size(); ++k)
      if (r["steps"][k]["name"] != std::string(kRoundSteps[k])) return false;
    // warm-ups freeze, transfers copy
    if (r["steps"][2]["encoder_hash_before"] != r["steps"][2]["encoder_hash_after"]) return false;
    if (r["steps"][5]["encoder_hash_before"] != r["steps"][5]["encoder_hash_after"]) return false;
    if (r["steps"][1]["encoders_identical"] != true || r["steps"][4]["encoders_identical"] != true) return false;
  }
  return true;
}

// Mean Grad-CAM heat inside a rim of the truth boundary versus the remaining interior.
std::string band_statistic(SegmentationNet& net, const std::vector<Sample>& test, int rim) {
  double band = 0.0, interior = 0.0;
  int n = 0;
  for (const auto& s : test) {
    if (s.object_label != ObjectLabel::landslide || n >= 20) continue;
    const auto h = grad_cam(net, s.tile, &s.mask);
    if (h.degenerate) continue;
    const auto b = band_heat(h, s.mask, rim);
    if (b.interior_pixels == 0) continue;
    band += b.band_mean;
    interior += b.interior_mean;
    ++n;
  }
  if (n == 0) return "grad-cam band statistic unavailable";
  return fmt("grad-cam heat band %.3f vs interior %.3f over %d tiles", band / n, interior / n, n);
}

Outcome end_to_end() {
  auto cfg = smoke_config();
  const auto& tc = cfg.training;
  if (std::max({tc.epochs_classification, tc.epochs_segmentation, tc.epochs_warmup}) > kSmokeEpochCap)
    return {false, "smoke config exceeds the epoch cap"};
  const auto data = synth_splits(cfg, 0);
  const auto rule = cfg.object_rule.scaled_to(cfg.data.tile_size * cfg.data.tile_size);
  const bool sizes = static_cast<int>(data.train.size()) == kSmokeTrain &&
                     static_cast<int>(data.val.size()) == kSmokeVal && static_cast<int>(data.test.size()) == kSmokeTest;
  const bool thresholds = rule.landslide_hit_threshold == kSmokeHit && rule.slope_fp_threshold == kSmokeFp;

  auto s = smoke_run(data, cfg);
  const bool order = phase_order_ok(s.run.round_log, kSmokeRounds);
  const bool scores = s.seg.pixel.landslide_iou >= kSmokeIou && s.cls.accuracy >= kSmokeAccuracy;
  const bool applied = s.seg.rule.landslide_hit_threshold == kSmokeHit && s.seg.rule.slope_fp_threshold == kSmokeFp;

  IcssnModel model(cfg);
  restore(*model.segmentation, s.run.segmentation);
  model.segmentation->eval();
  const auto cam = band_statistic(model.segmentation, data.test, cfg.segmentation.thresholds.block);

  return {sizes && thresholds && applied && order && scores && s.seconds <= kSmokeSeconds,
          fmt("splits %zu/%zu/%zu; thresholds %d/%d; phase order %s; landslide IoU %.3f (>= %.1f); "
              "classification accuracy %.3f (>= %.1f); object acc %.3f/%.3f; %.0f s (limit %.0f); ",
              data.train.size(), data.val.size(), data.test.size(), s.seg.rule.landslide_hit_threshold,
              s.seg.rule.slope_fp_threshold, order ? "ok" : "WRONG", s.seg.pixel.landslide_iou, kSmokeIou,
              s.cls.accuracy, kSmokeAccuracy, s.seg.object.acc_landslide, s.seg.object.acc_slope, s.seconds,
              kSmokeSeconds) +
              cam};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome ablations(int landslides_per_class) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<double> edge_iou, center_iou, edge_f1, base_f1, r1, r2;
  for (auto seed : seeds) {
    auto cfg = smoke_config();
    cfg.synth.landslide_count = cfg.synth.slope_count = landslides_per_class;
    cfg.training.seed = seed;
    const auto data = synth_splits(cfg, seed);

    auto edge = cfg;
    edge.segmentation.strategy = BlockStrategy::edge;
    auto center = cfg;
    center.segmentation.strategy = BlockStrategy::center;
    auto base = cfg;
    base.segmentation.lambda = 0.0;

    const auto e = smoke_run(data, edge);
    const auto c = smoke_run(data, center);
    const auto b = smoke_run(data, base);
    edge_iou.push_back(e.seg.pixel.landslide_iou);
    center_iou.push_back(c.seg.pixel.landslide_iou);
    edge_f1.push_back(e.seg.pixel.f1);
    base_f1.push_back(b.seg.pixel.f1);
    const auto& rounds = e.run.round_log["rounds"];
    r1.push_back(rounds[0]["test_metrics"]["segmentation"]["pixel"]["landslide_iou"].get<double>());
    r2.push_back(rounds[1]["test_metrics"]["segmentation"]["pixel"]["landslide_iou"].get<double>());
    std::printf("  seed %llu: edge IoU %.3f center IoU %.3f | lambda>0 F1 %.3f lambda=0 F1 %.3f | round IoU %.3f -> %.3f\n",
                static_cast<unsigned long long>(seed), edge_iou.back(), center_iou.back(), edge_f1.back(),
                base_f1.back(), r1.back(), r2.back());
    std::fflush(stdout);
  }
  const double me = median3(edge_iou), mc = median3(center_iou), mf = median3(edge_f1), mb = median3(base_f1),
               m1 = median3(r1), m2 = median3(r2);
  const bool o1 = me >= mc, o2 = m2 >= m1, o3 = mf >= mb;
  return {o1 && o2 && o3,
          fmt("medians over %zu seeds at %d+%d tiles: edge IoU %.3f %s center %.3f; round2 IoU %.3f %s round1 %.3f; "
              "lambda>0 F1 %.3f %s lambda=0 %.3f",
              seeds.size(), landslides_per_class, landslides_per_class, me, o1 ? ">=" : "<", mc, m2, o2 ? ">=" : "<",
              m1, mf, o3 ? ">=" : "<", mb)};
}

// ---------------------------------------------------------------- 8
Outcome complexity() {
  const Config cfg;
  const auto r = measure_complexity(cfg, 512);
  const double p = static_cast<double>(r.segmentation.parameters);
  return {p >= kParamsLo && p <= kParamsHi && r.classification.parameters > 0 && r.segmentation.macs > 0 &&
              r.classification.macs > 0,
          fmt("segmentation %.2f M params, %.2f GFLOPs; classification %.2f M params, %.2f GFLOPs per image pair "
              "at 512x512 (band [%.0f M, %.0f M])",
              p / 1e6, 2 * r.segmentation.macs / 1e9, static_cast<double>(r.classification.parameters) / 1e6,
              2 * r.classification.macs / 1e9, kParamsLo / 1e6, kParamsHi / 1e6)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"icssn acceptance suite"};
  std::vector<int> criteria;
  int ablation_tiles = 120;
  app.add_option("--criterion,-c", criteria, "Criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--ablation-tiles", ablation_tiles, "Tiles per class for the ablation runs");
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8};
  log::set_level(log::Level::warn);
  torch::set_num_threads(1);

  bool ok = true;
  for (int c : criteria) {
    Outcome o;
    bool crashed = false;
    try {
      switch (c) {
        case 1: o = socl_labels(); break;
        case 2: o = loss_oracles(); break;
        case 3: o = gradient_checks(); break;
        case 4: o = metrics_oracle(); break;
        case 5: o = structural(); break;
        case 6: o = end_to_end(); break;
        case 7: o = ablations(ablation_tiles); break;
        case 8: o = complexity(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
      crashed = true;
    }
    report(c, o, c == 7 && !crashed);
    if (c != 7 || crashed) ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
