#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "icssn/classification.hpp"
#include "icssn/data.hpp"
#include "icssn/encoder.hpp"
#include "icssn/metrics.hpp"
#include "icssn/segmentation.hpp"

namespace icssn {

struct DataConfig {
  int tile_size = 512;
  // Augmented copies emitted per training/validation sample besides the original.
  int augmentations = 5;
  SplitRatios split;
  bool equalize = true;
  double resolution_m = 2.0;
};

struct TrainingConfig {
  std::string optimizer = "sgd";
  double momentum = 0.9;
  double lr_classification = 0.001;
  double lr_segmentation = 0.007;
  double weight_decay = 0.0005;
  int batch_size = 4;
  int workers = 4;
  std::string schedule = "cosine";
  int epochs_classification = 50;
  int epochs_segmentation = 100;
  int epochs_warmup = 10;
  int max_rounds = 3;
  int patience = 8;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  bool deterministic = true;
};

void validate(const TrainingConfig& cfg);

// Every tunable of a run, grouped by the sections of the config file:
// [data] [synth] [encoder] [classifier] [segmentation] [socl] [training] [metrics].
struct Config {
  DataConfig data;
  SynthConfig synth;
  EncoderConfig encoder;
  ClassifierConfig classifier;
  SegLossConfig segmentation;  // lambda in [segmentation], the rest in [socl]
  double decoder_dropout = 0.1;
  TrainingConfig training;
  ObjectRuleConfig object_rule;
};

void validate(const Config& cfg);

// INI text. Unknown sections or keys are rejected with ConfigError.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
std::string to_ini(const Config& cfg);
void save_config(const Config& cfg, const std::filesystem::path& path);

// Stable FNV-1a hash of the canonical INI dump, as 16 hex digits.
std::string config_hash(const Config& cfg);

}  // namespace icssn
