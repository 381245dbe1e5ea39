#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "icssn/checkpoint.hpp"
#include "icssn/config.hpp"
#include "icssn/dataset_io.hpp"
#include "icssn/errors.hpp"
#include "icssn/explainability.hpp"
#include "icssn/log.hpp"
#include "icssn/orchestrator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace icssn;

namespace {

Config config_or_default(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error("cannot write " + out);
  f << j.dump(2) << "\n";
}

int cmd_synth(const std::string& config, std::uint64_t seed, const std::string& out) {
  Config cfg = config_or_default(config);
  auto samples = generate_synthetic_dataset(cfg.synth, seed);
  auto manifest = split_dataset(samples, cfg.data.split, seed);
  write_dataset(out, samples, manifest);
  std::printf("wrote %zu samples (%zu train / %zu val / %zu test) to %s\n", samples.size(), manifest.train.size(),
              manifest.val.size(), manifest.test.size(), out.c_str());
  return 0;
}

int cmd_preprocess(const std::string& in, const std::string& out, const std::string& config) {
  Config cfg = config_or_default(config);
  const Dataset ds = read_dataset(in, cfg.training.workers);
  if (!ds.has_manifest) throw ConfigError(in + " has no manifest.json");
  if (ds.manifest.preprocessed) throw ConfigError(in + " is already preprocessed");
  const auto splits = prepare_splits(ds.samples, ds.manifest, cfg.data.equalize, cfg.data.augmentations);

  DatasetManifest m;
  m.seed = ds.manifest.seed;
  m.preprocessed = true;
  std::vector<Sample> all;
  auto add = [&](const std::vector<Sample>& split, std::vector<std::string>& ids) {
    for (const auto& s : split) {
      ids.push_back(s.id);
      (s.object_label == ObjectLabel::landslide ? m.landslide_count : m.slope_count)++;
      all.push_back(s);
    }
  };
  add(splits.train, m.train);
  add(splits.val, m.val);
  add(splits.test, m.test);
  write_dataset(out, all, m);
  std::printf("preprocessed %zu -> %zu samples (%zu train / %zu val / %zu test) into %s\n", ds.samples.size(),
              all.size(), m.train.size(), m.val.size(), m.test.size(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out, std::optional<int> rounds,
              std::optional<std::uint64_t> seed, const std::string& resume) {
  Config cfg = config_or_default(config);
  if (seed) cfg.training.seed = *seed;
  const auto splits = load_splits(data, cfg.data.equalize, cfg.data.augmentations, cfg.training.workers);
  fs::create_directories(out);
  save_config(cfg, fs::path(out) / "config.ini");
  RunOptions opts;
  opts.out_dir = out;
  opts.max_rounds = rounds;
  opts.resume = resume;
  auto result = run_iterative_training(splits, cfg, opts);
  std::printf("finished %d round(s) (%s); checkpoints in %s\n", result.rounds_completed, result.stop_reason.c_str(),
              out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data, const std::string& task,
                 const std::string& split, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Config cfg = parse_config(ckpt.meta.config_ini);
  const auto splits = load_splits(data, cfg.data.equalize, cfg.data.augmentations, cfg.training.workers);
  const auto& samples = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;
  IcssnModel model(cfg);
  json j = {{"checkpoint", checkpoint}, {"split", split}, {"samples", samples.size()}, {"task", task}};
  if (task == "classify") {
    restore(*model.classification, ckpt);
    j["metrics"] = to_json(evaluate_classification(model.classification, samples));
  } else {
    restore(*model.segmentation, ckpt);
    j["metrics"] = to_json(evaluate_segmentation(model.segmentation, samples, cfg.object_rule));
    j["socl"] = {{"lambda", cfg.segmentation.lambda},
                 {"tau", cfg.segmentation.tau},
                 {"strategy", to_string(cfg.segmentation.strategy)}};
  }
  emit(j, out);
  return 0;
}

std::string cell(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return "     -";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.4f", j[key].get<double>());
  return buf;
}

int cmd_report(const std::string& run, const std::string& config, int input_size, const std::string& out) {
  json j;
  Config cfg;
  if (!config.empty()) {
    cfg = load_config(config);
  } else if (!run.empty() && fs::exists(fs::path(run) / "config.ini")) {
    cfg = load_config(fs::path(run) / "config.ini");
  }
  if (!run.empty()) {
    std::ifstream in(fs::path(run) / "rounds.json");
    if (!in) throw Error("no rounds.json under " + run);
    const json rounds = json::parse(in);
    j["rounds"] = rounds;
    std::printf("%-6s %-14s %-8s %-8s %-8s %-8s %-8s | %-8s %-8s %-8s\n", "round", "branch", "PA", "P", "R", "L-IoU",
                "mIoU", "F1", "AccL", "AccS");
    for (const auto& r : rounds.at("rounds")) {
      if (!r.contains("test_metrics")) continue;
      const auto& tm = r["test_metrics"];
      if (tm.contains("segmentation")) {
        const auto& px = tm["segmentation"]["pixel"];
        const auto& ob = tm["segmentation"]["object"];
        std::printf("%-6d %-14s %s   %s   %s   %s   %s   | %s   %s   %s\n", r["round"].get<int>(), "segmentation",
                    cell(px, "pa").c_str(), cell(px, "precision").c_str(), cell(px, "recall").c_str(),
                    cell(px, "landslide_iou").c_str(), cell(px, "miou").c_str(), cell(px, "f1").c_str(),
                    cell(ob, "acc_landslide").c_str(), cell(ob, "acc_slope").c_str());
      }
      if (tm.contains("classification")) {
        const auto& c = tm["classification"];
        std::printf("%-6d %-14s acc %s  P %s  R %s  F1 %s\n", r["round"].get<int>(), "classification",
                    cell(c, "accuracy").c_str(), cell(c, "precision").c_str(), cell(c, "recall").c_str(),
                    cell(c, "f1").c_str());
      }
    }
  }
  const int size = input_size > 0 ? input_size : cfg.data.tile_size;
  const auto cx = measure_complexity(cfg, size);
  j["complexity"] = to_json(cx);
  j["config"] = {{"lambda", cfg.segmentation.lambda},
                 {"tau", cfg.segmentation.tau},
                 {"n_pos", cfg.segmentation.n_pos},
                 {"n_neg", cfg.segmentation.n_neg},
                 {"strategy", to_string(cfg.segmentation.strategy)},
                 {"config_hash", config_hash(cfg)}};
  j["conventions"] = to_json(DegenerateConventions{});
  std::printf("complexity at %dx%d: classification %.2f M params %.2f GFLOPs | segmentation %.2f M params %.2f GFLOPs\n",
              size, size, cx.classification.parameters / 1e6, 2.0 * cx.classification.macs / 1e9,
              cx.segmentation.parameters / 1e6, 2.0 * cx.segmentation.macs / 1e9);
  if (!out.empty()) emit(j, out);
  return 0;
}

int cmd_cam(const std::string& checkpoint, const std::string& image, const std::string& out,
            const std::string& target, const std::string& mask) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Config cfg = parse_config(ckpt.meta.config_ini);
  Tile tile = read_tile_png(image);
  if (cfg.data.equalize) tile = equalize_histogram(tile);
  IcssnModel model(cfg);
  Heatmap heat;
  if (ckpt.meta.branch == "classification") {
    restore(*model.classification, ckpt);
    heat = grad_cam(model.classification, tile, joint_class_from_string(target.empty() ? "LL" : target));
  } else {
    restore(*model.segmentation, ckpt);
    std::optional<Mask> region;
    if (!mask.empty()) region = read_mask_png(mask);
    heat = grad_cam(model.segmentation, tile, region ? &*region : nullptr);
  }
  const fs::path out_path(out);
  write_tile_png(heatmap_overlay(tile, heat), out_path);
  const fs::path raw = out_path.parent_path() / (out_path.stem().string() + "_raw.png");
  write_heatmap_png(heat, raw);
  std::printf("target %s%s; wrote %s and %s\n", heat.target.c_str(), heat.degenerate ? " (degenerate: all zero)" : "",
              out_path.c_str(), raw.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICSSN landslide classification and segmentation"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  std::string config, out, data, in, resume, checkpoint, task = "segment", split = "test", image, target, mask, run;
  std::uint64_t seed = 0;
  std::optional<int> rounds;
  std::optional<std::uint64_t> train_seed;
  int input_size = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config, "config file")->check(CLI::ExistingFile);
  synth->add_option("--seed", seed, "generator and split seed");
  synth->add_option("--out", out, "output directory")->required();

  auto* pre = app.add_subcommand("preprocess", "equalize and augment a dataset");
  pre->add_option("--in", in, "input dataset directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", out, "output directory")->required();
  pre->add_option("--config", config, "config file")->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "alternating training of both branches");
  train->add_option("--config", config, "config file")->check(CLI::ExistingFile);
  train->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "run directory")->required();
  train->add_option("--rounds", rounds, "override training.max_rounds");
  train->add_option("--seed", train_seed, "override training.seed");
  train->add_option("--resume", resume, "state.json of an interrupted run")->check(CLI::ExistingPath);

  auto* eval = app.add_subcommand("evaluate", "metrics of a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--task", task, "classify or segment")->check(CLI::IsMember({"classify", "segment"}));
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out, "write JSON here instead of stdout");

  auto* report = app.add_subcommand("report", "round tables and complexity");
  report->add_option("--run", run, "run directory with rounds.json")->check(CLI::ExistingDirectory);
  report->add_option("--config", config, "config for the complexity count")->check(CLI::ExistingFile);
  report->add_option("--input-size", input_size, "input side for the MAC count (default: data.tile_size)");
  report->add_option("--out", out, "write JSON here");

  auto* cam = app.add_subcommand("cam", "Grad-CAM heatmap for one image");
  cam->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  cam->add_option("--image", image, "RGB png")->required()->check(CLI::ExistingFile);
  cam->add_option("--out", out, "overlay png (raw heatmap goes next to it)")->required();
  cam->add_option("--target", target, "joint class for a classification checkpoint (LL, LS, SL, SS)");
  cam->add_option("--mask", mask, "region mask for a segmentation checkpoint")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (verbose) log::set_level(log::Level::debug);
  if (quiet) log::set_level(log::Level::warn);

  try {
    if (*synth) return cmd_synth(config, seed, out);
    if (*pre) return cmd_preprocess(in, out, config);
    if (*train) return cmd_train(config, data, out, rounds, train_seed, resume);
    if (*eval) return cmd_evaluate(checkpoint, data, task, split, out);
    if (*report) return cmd_report(run, config, input_size, out);
    if (*cam) return cmd_cam(checkpoint, image, out, target, mask);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
