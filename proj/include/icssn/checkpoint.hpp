#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace icssn {

struct CheckpointMeta {
  std::string branch;  // "classification" | "segmentation"
  int round = 0;
  std::string phase;   // "warmup" | "joint"
  int epoch = 0;
  std::string config_hash;
  nlohmann::json val_metrics = nlohmann::json::object();
  std::string config_ini;  // full config so a checkpoint can rebuild its network
};

// Flat namespace of named tensors ("encoder/backbone/...", "decoder/...", ...).
// Holds parameters and buffers (BN running statistics).
struct Checkpoint {
  std::map<std::string, torch::Tensor> tensors;
  CheckpointMeta meta;
};

inline constexpr const char* kEncoderPrefix = "encoder/";

// Deep copy of a module's parameters and buffers.
Checkpoint capture(const torch::nn::Module& module, CheckpointMeta meta = {});
// Strict: names and shapes must match exactly, else CheckpointError.
void restore(torch::nn::Module& module, const Checkpoint& ckpt);

// Writes <path> (tensors) and <path>.json (metadata) via write-temp-then-rename.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const CheckpointMeta& meta);
CheckpointMeta meta_from_json(const nlohmann::json& j);

// Copies every encoder/* tensor of src into dst. Throws CheckpointError naming
// the divergent entries when the encoder namespaces differ in structure.
void transfer_encoder(const Checkpoint& src, torch::nn::Module& dst);
void transfer_encoder(const torch::nn::Module& src, torch::nn::Module& dst);

// Hash over the names and bytes of all encoder/* tensors.
std::uint64_t encoder_hash(const torch::nn::Module& module);
std::uint64_t encoder_hash(const Checkpoint& ckpt);

// Names whose tensors differ (in shape or any byte) between two modules' encoders.
std::vector<std::string> encoder_differences(const torch::nn::Module& a, const torch::nn::Module& b);

}  // namespace icssn
