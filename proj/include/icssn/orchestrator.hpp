#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "icssn/checkpoint.hpp"
#include "icssn/classification.hpp"
#include "icssn/config.hpp"
#include "icssn/dataset_io.hpp"
#include "icssn/metrics.hpp"
#include "icssn/segmentation.hpp"

namespace icssn {

enum class Branch { classification, segmentation };
enum class Phase { warmup, joint };

std::string_view to_string(Branch b);
std::string_view to_string(Phase p);

// Early stopping on validation loss: an epoch improves when it beats the best
// so far by more than min_delta; stop after `patience` epochs without one.
class ConvergenceCriterion {
 public:
  ConvergenceCriterion(int patience, double min_delta);

  // Returns true when this value is a new best.
  bool update(double val_loss);
  bool converged() const { return stale_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int epoch_ = 0;
  int stale_ = 0;
};

// Learning rate for 0-based epoch e of a phase capped at `cap` epochs.
double cosine_lr(double lr0, int epoch, int cap);

// Both branch networks of one run, built from a config with a fixed seed.
struct IcssnModel {
  ClassificationNet classification{nullptr};
  SegmentationNet segmentation{nullptr};

  explicit IcssnModel(const Config& cfg);
  torch::nn::Module& module(Branch b);
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct PhaseOptions {
  Branch branch = Branch::classification;
  Phase phase = Phase::joint;
  int round = 1;
  int epoch_cap = 1;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;
  // Where a diagnostic checkpoint goes if the loss turns NaN (empty: cwd).
  std::filesystem::path diagnostic_dir;
};

struct PhaseResult {
  Checkpoint best;  // best-validation state, already restored into the network
  std::vector<EpochRecord> epochs;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  bool converged = false;  // stopped by the criterion rather than the cap
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains one branch with SGD + cosine schedule until convergence or the cap.
// With freeze_encoder the encoder runs in eval mode and receives no updates.
// Throws TrainingError on a non-finite loss after writing a diagnostic checkpoint.
PhaseResult train_branch(IcssnModel& model, const SplitSamples& data, const Config& cfg, const PhaseOptions& opts,
                         const EpochCallback& on_epoch = {});

// Mean validation loss for a branch (eval mode, fixed pairing/sampling seeds).
double validation_loss(IcssnModel& model, Branch branch, const std::vector<Sample>& samples, const Config& cfg,
                       std::uint64_t seed);

struct SegmentationReport {
  ConfusionCounts counts;
  PixelMetrics pixel;
  ObjectAccuracy object;
  ObjectRuleConfig rule;  // thresholds actually applied
};

std::vector<Mask> predict_masks(SegmentationNet& net, const std::vector<Sample>& samples, int batch_size = 4);
SegmentationReport evaluate_segmentation(SegmentationNet& net, const std::vector<Sample>& samples,
                                         const ObjectRuleConfig& rule, int batch_size = 4);
BinaryMetrics evaluate_classification(ClassificationNet& net, const std::vector<Sample>& samples);

nlohmann::json to_json(const PixelMetrics& m);
nlohmann::json to_json(const ObjectAccuracy& a);
nlohmann::json to_json(const ConfusionCounts& c);
nlohmann::json to_json(const SegmentationReport& r);
nlohmann::json to_json(const BinaryMetrics& m);
nlohmann::json to_json(const DegenerateConventions& c);

struct RunOptions {
  std::filesystem::path out_dir;  // checkpoints/, rounds.json, state.json; empty disables writing
  std::optional<int> max_rounds;  // overrides cfg.training.max_rounds
  std::filesystem::path resume;   // state.json (or its directory) of an interrupted run
  bool evaluate_test = true;      // record test metrics after every training phase
  EpochCallback on_epoch;
};

struct RunResult {
  Checkpoint classification;
  Checkpoint segmentation;
  nlohmann::json round_log;  // same content as rounds.json
  int rounds_completed = 0;
  std::string stop_reason;  // "max_rounds" | "no_improvement"
};

// The six steps per round in order.
inline constexpr std::array<std::string_view, 6> kRoundSteps = {
    "classification/joint",      "transfer classification->segmentation", "segmentation/warmup",
    "segmentation/joint",        "transfer segmentation->classification", "classification/warmup"};

struct BranchComplexity {
  std::int64_t parameters = 0;
  std::int64_t trainable = 0;
  double macs = 0.0;  // one forward pass (the classifier runs two encoder passes per pair)
};

struct ComplexityReport {
  int input_size = 0;
  BranchComplexity classification;
  BranchComplexity segmentation;
};

// Builds both branches from cfg and counts conv/linear multiply-accumulates
// for one input_size x input_size forward pass. GFLOPs are reported as 2 * MACs.
ComplexityReport measure_complexity(const Config& cfg, int input_size);
nlohmann::json to_json(const ComplexityReport& r);

// Alternating training of the two branches. Every step is checkpointed under
// out_dir so an interrupted run can resume at the next step.
RunResult run_iterative_training(const SplitSamples& data, const Config& cfg, const RunOptions& opts = {});

}  // namespace icssn
