#include "icssn/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "icssn/complexity.hpp"
#include "icssn/errors.hpp"
#include "icssn/log.hpp"
#include "icssn/tensors.hpp"

namespace icssn {

namespace fs = std::filesystem;

std::string_view to_string(Branch b) { return b == Branch::classification ? "classification" : "segmentation"; }
std::string_view to_string(Phase p) { return p == Phase::warmup ? "warmup" : "joint"; }

ConvergenceCriterion::ConvergenceCriterion(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (min_delta < 0.0) throw ConfigError("min_delta must be nonnegative");
}

bool ConvergenceCriterion::update(double val_loss) {
  const int e = epoch_++;
  // The first finite value always counts; afterwards it must beat best by min_delta.
  const bool better = std::isfinite(val_loss) && (best_epoch_ < 0 || val_loss < best_ - min_delta_);
  if (better) {
    best_ = val_loss;
    best_epoch_ = e;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return better;
}

double cosine_lr(double lr0, int epoch, int cap) {
  if (cap <= 0) return lr0;
  const double pi = std::acos(-1.0);
  return lr0 * 0.5 * (1.0 + std::cos(pi * static_cast<double>(epoch) / static_cast<double>(cap)));
}

IcssnModel::IcssnModel(const Config& cfg) {
  torch::manual_seed(cfg.training.seed);
  classification = ClassificationNet(cfg.encoder, cfg.classifier);
  segmentation = SegmentationNet(cfg.encoder, cfg.decoder_dropout);
}

torch::nn::Module& IcssnModel::module(Branch b) {
  if (b == Branch::classification) return *classification;
  return *segmentation;
}

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string hex(std::uint64_t h) { return fmt("%016llx", static_cast<unsigned long long>(h)); }

Encoder& encoder_of(IcssnModel& m, Branch b) {
  return b == Branch::classification ? m.classification->encoder : m.segmentation->encoder;
}

struct PairTensors {
  torch::Tensor a, b, labels;
};

PairTensors pair_batch(const std::vector<PairSample>& pairs, std::size_t begin, std::size_t end) {
  std::vector<const Tile*> ta, tb;
  std::vector<std::int64_t> labels;
  for (std::size_t i = begin; i < end; ++i) {
    ta.push_back(&pairs[i].a->tile);
    tb.push_back(&pairs[i].b->tile);
    labels.push_back(static_cast<std::int64_t>(pairs[i].joint_label));
  }
  return {tiles_to_tensor(ta), tiles_to_tensor(tb), torch::tensor(labels, torch::kInt64)};
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

// Loss of one segmentation batch; samples[order[begin..end)].
SegLossBreakdown seg_batch_loss(SegmentationNet& net, const std::vector<const Sample*>& batch, const Config& cfg,
                                std::uint64_t seed) {
  std::vector<const Tile*> tiles;
  std::vector<const Mask*> masks;
  for (const auto* s : batch) {
    tiles.push_back(&s->tile);
    masks.push_back(&s->mask);
  }
  auto out = net->forward_full(tiles_to_tensor(tiles));
  return segmentation_loss(out.logits, masks, out.features, cfg.segmentation, seed);
}

void set_train_mode(IcssnModel& model, Branch b, bool freeze) {
  model.module(b).train();
  if (freeze) encoder_of(model, b)->eval();
}

}  // namespace

double validation_loss(IcssnModel& model, Branch branch, const std::vector<Sample>& samples, const Config& cfg,
                       std::uint64_t seed) {
  if (samples.empty()) throw SizeError("validation split is empty");
  torch::NoGradGuard no_grad;
  model.module(branch).eval();
  const auto bs = static_cast<std::size_t>(cfg.training.batch_size);
  double total = 0.0;
  std::size_t n = 0;
  if (branch == Branch::classification) {
    const auto pairs = form_pairs(pointers(samples), mix_seed(seed, "val-pairs"));
    for (std::size_t i = 0; i < pairs.size(); i += bs) {
      const auto end = std::min(pairs.size(), i + bs);
      auto t = pair_batch(pairs, i, end);
      total += classification_loss(model.classification->forward(t.a, t.b), t.labels).item<double>() * (end - i);
      n += end - i;
    }
  } else {
    const auto ptrs = pointers(samples);
    for (std::size_t i = 0, k = 0; i < ptrs.size(); i += bs, ++k) {
      const auto end = std::min(ptrs.size(), i + bs);
      std::vector<const Sample*> batch(ptrs.begin() + i, ptrs.begin() + end);
      auto loss = seg_batch_loss(model.segmentation, batch, cfg, mix_seed(mix_seed(seed, "val-socl"), k));
      total += loss.total.item<double>() * (end - i);
      n += end - i;
    }
  }
  return total / static_cast<double>(n);
}

PhaseResult train_branch(IcssnModel& model, const SplitSamples& data, const Config& cfg, const PhaseOptions& opts,
                         const EpochCallback& on_epoch) {
  validate(cfg);
  if (data.train.empty()) throw SizeError("training split is empty");
  if (opts.epoch_cap < 1) throw ConfigError("epoch_cap must be positive");
  const Branch branch = opts.branch;
  auto& net = model.module(branch);
  torch::manual_seed(mix_seed(opts.seed, "torch"));

  // Freezing: encoder parameters leave the optimizer and stop tracking gradients;
  // eval mode keeps BN running statistics fixed too.
  std::vector<torch::Tensor> params;
  std::vector<torch::Tensor> frozen;
  for (auto& p : net.named_parameters(true)) {
    const bool enc = p.key().rfind("encoder.", 0) == 0;
    if (opts.freeze_encoder && enc) {
      if (p.value().requires_grad()) frozen.push_back(p.value());
      p.value().set_requires_grad(false);
    } else if (p.value().requires_grad()) {
      params.push_back(p.value());
    }
  }

  const auto& tc = cfg.training;
  const double lr0 = branch == Branch::classification ? tc.lr_classification : tc.lr_segmentation;
  torch::optim::SGD optimizer(params, torch::optim::SGDOptions(lr0).momentum(tc.momentum).weight_decay(tc.weight_decay));
  ConvergenceCriterion criterion(tc.patience, tc.min_delta);

  CheckpointMeta meta;
  meta.branch = std::string(to_string(branch));
  meta.round = opts.round;
  meta.phase = std::string(to_string(opts.phase));
  meta.config_hash = config_hash(cfg);
  meta.config_ini = to_ini(cfg);

  PhaseResult result;
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  const auto train_ptrs = pointers(data.train);
  const std::string tag = fmt("round %d %s/%s", opts.round, meta.branch.c_str(), meta.phase.c_str());

  for (int e = 0; e < opts.epoch_cap; ++e) {
    const double lr = tc.schedule == "cosine" ? cosine_lr(lr0, e, opts.epoch_cap) : lr0;
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    set_train_mode(model, branch, opts.freeze_encoder);
    const std::uint64_t epoch_seed = mix_seed(opts.seed, static_cast<std::uint64_t>(e));

    double loss_sum = 0.0;
    std::size_t seen = 0;
    auto step = [&](const torch::Tensor& loss, std::size_t n) {
      const double v = loss.item<double>();
      if (!std::isfinite(v)) {
        const fs::path dir = opts.diagnostic_dir.empty() ? fs::path(".") : opts.diagnostic_dir;
        const fs::path path = dir / fmt("diagnostic_%s_r%d_%s_e%d.pt", meta.branch.c_str(), opts.round,
                                        meta.phase.c_str(), e);
        CheckpointMeta m = meta;
        m.epoch = e;
        m.val_metrics = {{"train_loss", "non-finite"}};
        save_checkpoint(capture(net, m), path);
        for (auto& p : frozen) p.set_requires_grad(true);
        throw TrainingError(tag + ": non-finite loss at epoch " + std::to_string(e) + "; state saved to " +
                            path.string());
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += v * static_cast<double>(n);
      seen += n;
    };

    if (branch == Branch::classification) {
      const auto pairs = form_pairs(train_ptrs, epoch_seed);
      for (std::size_t i = 0; i < pairs.size(); i += bs) {
        const auto end = std::min(pairs.size(), i + bs);
        auto t = pair_batch(pairs, i, end);
        step(classification_loss(model.classification->forward(t.a, t.b), t.labels), end - i);
      }
    } else {
      std::vector<std::size_t> order(train_ptrs.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(epoch_seed);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0, k = 0; i < order.size(); i += bs, ++k) {
        const auto end = std::min(order.size(), i + bs);
        std::vector<const Sample*> batch;
        for (std::size_t j = i; j < end; ++j) batch.push_back(train_ptrs[order[j]]);
        // Sampler seed depends only on (epoch, batch index).
        step(seg_batch_loss(model.segmentation, batch, cfg, mix_seed(epoch_seed, k)).total, end - i);
      }
    }

    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, seen));
    rec.val_loss = validation_loss(model, branch, data.val, cfg, tc.seed);
    rec.improved = criterion.update(rec.val_loss);
    if (rec.improved) {
      CheckpointMeta m = meta;
      m.epoch = e;
      m.val_metrics = {{"val_loss", rec.val_loss}};
      result.best = capture(net, m);
    }
    result.epochs.push_back(rec);
    log::info(fmt("%s epoch %d/%d lr %.3g train %.5f val %.5f%s", tag.c_str(), e + 1, opts.epoch_cap, lr,
                  rec.train_loss, rec.val_loss, rec.improved ? " *" : ""));
    if (on_epoch) on_epoch(rec);
    if (criterion.converged()) {
      result.converged = true;
      break;
    }
  }

  for (auto& p : frozen) p.set_requires_grad(true);
  if (result.best.tensors.empty()) {
    log::warn(tag + ": no finite validation loss; keeping the final state");
    CheckpointMeta m = meta;
    m.epoch = static_cast<int>(result.epochs.size()) - 1;
    result.best = capture(net, m);
  } else {
    restore(net, result.best);
  }
  result.best_val_loss = criterion.best();
  result.best_epoch = criterion.best_epoch();
  net.eval();
  return result;
}

std::vector<Mask> predict_masks(SegmentationNet& net, const std::vector<Sample>& samples, int batch_size) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<Mask> out;
  out.reserve(samples.size());
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t i = 0; i < samples.size(); i += bs) {
    std::vector<const Tile*> tiles;
    for (std::size_t j = i; j < std::min(samples.size(), i + bs); ++j) tiles.push_back(&samples[j].tile);
    auto labels = net->forward(tiles_to_tensor(tiles)).argmax(1);
    for (std::int64_t k = 0; k < labels.size(0); ++k) out.push_back(tensor_to_mask(labels[k]));
  }
  return out;
}

SegmentationReport evaluate_segmentation(SegmentationNet& net, const std::vector<Sample>& samples,
                                         const ObjectRuleConfig& rule, int batch_size) {
  if (samples.empty()) throw SizeError("cannot evaluate on an empty split");
  const auto preds = predict_masks(net, samples, batch_size);
  std::vector<Mask> truths;
  std::vector<ObjectLabel> labels;
  for (const auto& s : samples) {
    truths.push_back(s.mask);
    labels.push_back(s.object_label);
  }
  SegmentationReport r;
  r.rule = rule.scaled_to(samples.front().mask.height * samples.front().mask.width);
  r.counts = confusion_counts(preds, truths);
  r.pixel = pixel_metrics(r.counts);
  r.object = object_level_accuracy(preds, truths, labels, r.rule);
  return r;
}

BinaryMetrics evaluate_classification(ClassificationNet& net, const std::vector<Sample>& samples) {
  if (samples.empty()) throw SizeError("cannot evaluate on an empty split");
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<ObjectLabel> predicted, truth;
  constexpr std::size_t bs = 8;
  for (std::size_t i = 0; i < samples.size(); i += bs) {
    std::vector<const Tile*> tiles;
    const auto end = std::min(samples.size(), i + bs);
    for (std::size_t j = i; j < end; ++j) tiles.push_back(&samples[j].tile);
    // Self-pairing, batched: encode once, feed the same features to both slots.
    auto f = net->encoder->forward(tiles_to_tensor(tiles));
    auto probs = net->classifier->forward(f, f).exp().to(torch::kFloat64).contiguous();
    for (std::size_t j = i; j < end; ++j) {
      std::array<double, 4> p{};
      for (int k = 0; k < 4; ++k) p[k] = probs[static_cast<std::int64_t>(j - i)][k].item<double>();
      predicted.push_back(object_label_from_joint(p).label);
      truth.push_back(samples[j].object_label);
    }
  }
  return binary_metrics(predicted, truth);
}

nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}

nlohmann::json to_json(const PixelMetrics& m) {
  return {{"pa", m.pa},
          {"precision", m.precision},
          {"recall", m.recall},
          {"landslide_iou", m.landslide_iou},
          {"slope_iou", m.slope_iou},
          {"miou", m.miou},
          {"f1", m.f1}};
}

nlohmann::json to_json(const ObjectAccuracy& a) {
  return {{"acc_landslide", a.acc_landslide},
          {"acc_slope", a.acc_slope},
          {"acc_avg", a.acc_avg},
          {"n_landslide", a.n_landslide},
          {"n_slope", a.n_slope}};
}

nlohmann::json to_json(const DegenerateConventions& c) {
  return {{"perfect_absence", c.perfect_absence}, {"otherwise", c.otherwise}};
}

nlohmann::json to_json(const SegmentationReport& r) {
  return {{"pixel", to_json(r.pixel)},
          {"object", to_json(r.object)},
          {"counts", to_json(r.counts)},
          {"object_rule",
           {{"landslide_hit_threshold", r.rule.landslide_hit_threshold},
            {"slope_fp_threshold", r.rule.slope_fp_threshold},
            {"tile_area", r.rule.reference_area}}},
          {"conventions", to_json(DegenerateConventions{})}};
}

nlohmann::json to_json(const BinaryMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"counts", to_json(m.counts)},
          {"conventions", to_json(DegenerateConventions{})}};
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed " + path.string() + ": " + e.what());
  }
}

double json_double(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

struct RunState {
  int round = 1;
  int next_step = 0;
  bool finished = false;
  std::string stop_reason;
  double prev_best_cls = std::numeric_limits<double>::infinity();
  double prev_best_seg = std::numeric_limits<double>::infinity();
  double round_best_cls = std::numeric_limits<double>::infinity();
  double round_best_seg = std::numeric_limits<double>::infinity();
  fs::path cls_ckpt, seg_ckpt;
};

nlohmann::json state_to_json(const RunState& s, const nlohmann::json& rlog) {
  return {{"round", s.round},
          {"next_step", s.next_step},
          {"finished", s.finished},
          {"stop_reason", s.stop_reason},
          {"prev_best", {{"classification", finite_or_null(s.prev_best_cls)}, {"segmentation", finite_or_null(s.prev_best_seg)}}},
          {"round_best",
           {{"classification", finite_or_null(s.round_best_cls)}, {"segmentation", finite_or_null(s.round_best_seg)}}},
          {"checkpoints", {{"classification", s.cls_ckpt.filename().string()}, {"segmentation", s.seg_ckpt.filename().string()}}},
          {"round_log", rlog}};
}

}  // namespace

RunResult run_iterative_training(const SplitSamples& data, const Config& cfg, const RunOptions& opts) {
  validate(cfg);
  if (cfg.training.deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
  }
  const int max_rounds = opts.max_rounds.value_or(cfg.training.max_rounds);
  if (max_rounds < 1) throw ConfigError("max_rounds must be at least 1");

  IcssnModel model(cfg);
  const bool writing = !opts.out_dir.empty();
  const fs::path ckpt_dir = opts.out_dir / "checkpoints";
  if (writing) fs::create_directories(ckpt_dir);

  nlohmann::json rlog = {{"config_hash", config_hash(cfg)},
                        {"max_rounds", max_rounds},
                        {"steps", kRoundSteps},
                        {"rounds", nlohmann::json::array()}};
  RunState st;

  if (!opts.resume.empty()) {
    const fs::path state_path = fs::is_directory(opts.resume) ? opts.resume / "state.json" : opts.resume;
    const auto j = read_json(state_path);
    const fs::path dir = state_path.parent_path();
    rlog = j.at("round_log");
    if (rlog.at("config_hash").get<std::string>() != config_hash(cfg))
      throw CheckpointError("resume state was produced by a different config (hash " +
                            rlog.at("config_hash").get<std::string>() + ")");
    rlog["max_rounds"] = max_rounds;
    st.round = j.at("round").get<int>();
    st.next_step = j.at("next_step").get<int>();
    st.finished = j.at("finished").get<bool>();
    st.stop_reason = j.at("stop_reason").get<std::string>();
    st.prev_best_cls = json_double(j.at("prev_best").at("classification"));
    st.prev_best_seg = json_double(j.at("prev_best").at("segmentation"));
    st.round_best_cls = json_double(j.at("round_best").at("classification"));
    st.round_best_seg = json_double(j.at("round_best").at("segmentation"));
    st.cls_ckpt = dir / j.at("checkpoints").at("classification").get<std::string>();
    st.seg_ckpt = dir / j.at("checkpoints").at("segmentation").get<std::string>();
    restore(*model.classification, load_checkpoint(st.cls_ckpt));
    restore(*model.segmentation, load_checkpoint(st.seg_ckpt));
    // A run resumed with a larger round budget continues past its old stop.
    if (st.finished && st.stop_reason == "max_rounds" && st.round <= max_rounds) st.finished = false;
    log::info(fmt("resuming at round %d step %d", st.round, st.next_step + 1));
  }

  const auto& tc = cfg.training;
  auto record_phase = [&](nlohmann::json& entry, Branch b, const PhaseResult& res) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : res.epochs)
      epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", finite_or_null(e.train_loss)},
                        {"val_loss", finite_or_null(e.val_loss)}, {"improved", e.improved}});
    entry["epochs_run"] = res.epochs.size();
    entry["best_epoch"] = res.best_epoch;
    entry["best_val_loss"] = finite_or_null(res.best_val_loss);
    entry["converged"] = res.converged;
    entry["epochs"] = std::move(epochs);
    if (opts.evaluate_test && !data.test.empty()) {
      if (b == Branch::classification)
        entry["test_metrics"] = to_json(evaluate_classification(model.classification, data.test));
      else
        entry["test_metrics"] = to_json(evaluate_segmentation(model.segmentation, data.test, cfg.object_rule));
    }
  };

  while (!st.finished) {
    const int r = st.round;
    if (static_cast<int>(rlog["rounds"].size()) < r)
      rlog["rounds"].push_back({{"round", r}, {"steps", nlohmann::json::array()}});
    auto& round_entry = rlog["rounds"][r - 1];

    for (int k = st.next_step; k < static_cast<int>(kRoundSteps.size()); ++k) {
      nlohmann::json entry = {{"step", k + 1}, {"name", kRoundSteps[k]}};
      const std::uint64_t seed = mix_seed(tc.seed, static_cast<std::uint64_t>(r * 16 + k));
      auto phase = [&](Branch b, Phase p, int cap) {
        PhaseOptions po;
        po.branch = b;
        po.phase = p;
        po.round = r;
        po.epoch_cap = cap;
        po.freeze_encoder = p == Phase::warmup;
        po.seed = seed;
        po.diagnostic_dir = writing ? ckpt_dir : fs::path();
        entry["branch"] = to_string(b);
        entry["phase"] = to_string(p);
        entry["encoder_hash_before"] = hex(encoder_hash(model.module(b)));
        auto res = train_branch(model, data, cfg, po, opts.on_epoch);
        entry["encoder_hash_after"] = hex(encoder_hash(model.module(b)));
        record_phase(entry, b, res);
        auto& best = b == Branch::classification ? st.round_best_cls : st.round_best_seg;
        best = std::min(best, res.best_val_loss);
      };
      auto transfer = [&](Branch from, Branch to) {
        transfer_encoder(model.module(from), model.module(to));
        entry["from"] = to_string(from);
        entry["to"] = to_string(to);
        entry["encoder_hash"] = hex(encoder_hash(model.module(to)));
        entry["encoders_identical"] = encoder_differences(model.module(from), model.module(to)).empty();
      };
      switch (k) {
        case 0: phase(Branch::classification, Phase::joint, tc.epochs_classification); break;
        case 1: transfer(Branch::classification, Branch::segmentation); break;
        case 2: phase(Branch::segmentation, Phase::warmup, tc.epochs_warmup); break;
        case 3: phase(Branch::segmentation, Phase::joint, tc.epochs_segmentation); break;
        case 4: transfer(Branch::segmentation, Branch::classification); break;
        case 5: phase(Branch::classification, Phase::warmup, tc.epochs_warmup); break;
      }
      log::info(fmt("round %d step %d (%s) done", r, k + 1, std::string(kRoundSteps[k]).c_str()));
      round_entry["steps"].push_back(std::move(entry));

      st.next_step = k + 1;
      if (k + 1 == static_cast<int>(kRoundSteps.size())) {
        const bool improved_cls = st.round_best_cls < st.prev_best_cls - tc.min_delta;
        const bool improved_seg = st.round_best_seg < st.prev_best_seg - tc.min_delta;
        round_entry["best_val_loss"] = {{"classification", finite_or_null(st.round_best_cls)},
                                        {"segmentation", finite_or_null(st.round_best_seg)}};
        round_entry["improved"] = {{"classification", improved_cls}, {"segmentation", improved_seg}};
        // Round summary: each branch's metrics after its joint phase.
        for (const auto& s : round_entry["steps"]) {
          if (s.value("phase", "") != "joint" || !s.contains("test_metrics")) continue;
          round_entry["test_metrics"][s["branch"].get<std::string>()] = s["test_metrics"];
        }
        st.prev_best_cls = std::min(st.prev_best_cls, st.round_best_cls);
        st.prev_best_seg = std::min(st.prev_best_seg, st.round_best_seg);
        st.round_best_cls = st.round_best_seg = std::numeric_limits<double>::infinity();
        if (r >= max_rounds) {
          st.finished = true;
          st.stop_reason = "max_rounds";
        } else if (!improved_cls && !improved_seg) {
          st.finished = true;
          st.stop_reason = "no_improvement";
        }
        st.round = r + 1;
        st.next_step = 0;
      }

      if (writing) {
        auto meta_for = [&](Branch b) {
          CheckpointMeta m;
          m.branch = std::string(to_string(b));
          m.round = r;
          m.phase = k == 2 || k == 5 ? "warmup" : "joint";
          m.config_hash = config_hash(cfg);
          m.config_ini = to_ini(cfg);
          return m;
        };
        st.cls_ckpt = ckpt_dir / fmt("round%d_step%d_classification.pt", r, k + 1);
        st.seg_ckpt = ckpt_dir / fmt("round%d_step%d_segmentation.pt", r, k + 1);
        save_checkpoint(capture(*model.classification, meta_for(Branch::classification)), st.cls_ckpt);
        save_checkpoint(capture(*model.segmentation, meta_for(Branch::segmentation)), st.seg_ckpt);
        rlog["stop_reason"] = st.stop_reason;
        write_json(ckpt_dir / "state.json", state_to_json(st, rlog));
        write_json(opts.out_dir / "rounds.json", rlog);
      }
      if (st.next_step == 0) break;
    }
  }

  RunResult result;
  rlog["stop_reason"] = st.stop_reason;
  result.round_log = rlog;
  result.rounds_completed = static_cast<int>(rlog["rounds"].size());
  result.stop_reason = st.stop_reason;
  auto final_meta = [&](Branch b) {
    CheckpointMeta m;
    m.branch = std::string(to_string(b));
    m.round = result.rounds_completed;
    m.phase = b == Branch::classification ? "warmup" : "joint";
    m.config_hash = config_hash(cfg);
    m.config_ini = to_ini(cfg);
    return m;
  };
  result.classification = capture(*model.classification, final_meta(Branch::classification));
  result.segmentation = capture(*model.segmentation, final_meta(Branch::segmentation));
  if (writing) {
    save_checkpoint(result.classification, opts.out_dir / "classification.pt");
    save_checkpoint(result.segmentation, opts.out_dir / "segmentation.pt");
    write_json(opts.out_dir / "rounds.json", rlog);
  }
  log::info("training finished after " + std::to_string(result.rounds_completed) + " round(s): " + st.stop_reason);
  return result;
}

ComplexityReport measure_complexity(const Config& cfg, int input_size) {
  if (input_size <= 0 || input_size % 8 != 0) throw ConfigError("input size must be a positive multiple of 8");
  IcssnModel model(cfg);
  torch::NoGradGuard no_grad;
  auto x = torch::zeros({1, 3, input_size, input_size});
  ComplexityReport r;
  r.input_size = input_size;
  model.classification->eval();
  model.segmentation->eval();
  {
    MacCountingScope scope;
    model.classification->forward(x, x);
    r.classification.macs = scope.macs();
  }
  {
    MacCountingScope scope;
    model.segmentation->forward(x);
    r.segmentation.macs = scope.macs();
  }
  r.classification.parameters = count_parameters(*model.classification);
  r.classification.trainable = count_parameters(*model.classification, true);
  r.segmentation.parameters = count_parameters(*model.segmentation);
  r.segmentation.trainable = count_parameters(*model.segmentation, true);
  return r;
}

nlohmann::json to_json(const ComplexityReport& r) {
  auto branch = [](const BranchComplexity& b) {
    return nlohmann::json{{"parameters", b.parameters},
                          {"trainable_parameters", b.trainable},
                          {"parameters_m", static_cast<double>(b.parameters) / 1e6},
                          {"gmacs", b.macs / 1e9},
                          {"gflops", 2.0 * b.macs / 1e9}};
  };
  return {{"input_size", r.input_size},
          {"classification", branch(r.classification)},
          {"segmentation", branch(r.segmentation)}};
}

}  // namespace icssn
