#include "icssn/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "icssn/errors.hpp"
#include "icssn/tensors.hpp"

namespace icssn {

namespace fs = std::filesystem;

namespace {

std::string slash_name(const std::string& dotted) {
  std::string s = dotted;
  for (auto& c : s)
    if (c == '.') c = '/';
  return s;
}

// Live (aliasing) views of a module's parameters and buffers by slash name.
std::map<std::string, torch::Tensor> live_tensors(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) out[slash_name(p.key())] = p.value();
  for (const auto& b : module.named_buffers(/*recurse=*/true)) out[slash_name(b.key())] = b.value();
  return out;
}

bool is_encoder(const std::string& name) { return name.rfind(kEncoderPrefix, 0) == 0; }

void atomic_write(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Checkpoint capture(const torch::nn::Module& module, CheckpointMeta meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (auto& [name, t] : live_tensors(module)) ckpt.tensors[name] = t.detach().clone();
  return ckpt;
}

void restore(torch::nn::Module& module, const Checkpoint& ckpt) {
  auto live = live_tensors(module);
  std::vector<std::string> problems;
  for (const auto& [name, t] : live) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      problems.push_back("missing " + name);
    else if (it->second.sizes() != t.sizes())
      problems.push_back("shape of " + name);
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (!live.count(name)) problems.push_back("unexpected " + name);
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match module:";
    for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += " " + problems[i] + ";";
    throw CheckpointError(msg);
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : live) t.copy_(ckpt.tensors.at(name));
}

nlohmann::json to_json(const CheckpointMeta& meta) {
  return {{"branch", meta.branch},           {"round", meta.round},
          {"phase", meta.phase},             {"epoch", meta.epoch},
          {"config_hash", meta.config_hash}, {"val_metrics", meta.val_metrics},
          {"config", meta.config_ini}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.branch = j.value("branch", "");
  m.round = j.value("round", 0);
  m.phase = j.value("phase", "");
  m.epoch = j.value("epoch", 0);
  m.config_hash = j.value("config_hash", "");
  m.val_metrics = j.value("val_metrics", nlohmann::json::object());
  m.config_ini = j.value("config", "");
  return m;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  c10::Dict<std::string, torch::Tensor> dict;
  for (const auto& [name, t] : ckpt.tensors) dict.insert(name, t.contiguous());
  const auto bytes = torch::pickle_save(c10::IValue(dict));
  atomic_write(path, std::string(bytes.begin(), bytes.end()));
  atomic_write(path.string() + ".json", to_json(ckpt.meta).dump(2));
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  Checkpoint ckpt;
  try {
    auto value = torch::pickle_load(std::vector<char>(bytes.begin(), bytes.end()));
    for (const auto& entry : value.toGenericDict())
      ckpt.tensors[entry.key().toStringRef()] = entry.value().toTensor();
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot decode checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  const fs::path sidecar = path.string() + ".json";
  if (fs::exists(sidecar)) {
    try {
      ckpt.meta = meta_from_json(nlohmann::json::parse(read_file(sidecar)));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError("bad metadata in " + sidecar.string() + ": " + e.what());
    }
  }
  return ckpt;
}

void transfer_encoder(const Checkpoint& src, torch::nn::Module& dst) {
  auto live = live_tensors(dst);
  std::vector<std::string> divergent;
  std::size_t matched = 0;
  for (const auto& [name, t] : live) {
    if (!is_encoder(name)) continue;
    auto it = src.tensors.find(name);
    if (it == src.tensors.end() || it->second.sizes() != t.sizes())
      divergent.push_back(name);
    else
      ++matched;
  }
  for (const auto& [name, t] : src.tensors)
    if (is_encoder(name) && !live.count(name)) divergent.push_back(name);
  if (!divergent.empty() || matched == 0) {
    std::string msg = "encoder namespaces differ:";
    for (std::size_t i = 0; i < divergent.size() && i < 20; ++i) msg += " " + divergent[i];
    if (divergent.size() > 20) msg += " ... (" + std::to_string(divergent.size()) + " total)";
    if (matched == 0 && divergent.empty()) msg += " no encoder tensors found";
    throw CheckpointError(msg);
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : live)
    if (is_encoder(name)) t.copy_(src.tensors.at(name));
}

void transfer_encoder(const torch::nn::Module& src, torch::nn::Module& dst) { transfer_encoder(capture(src), dst); }

namespace {
std::uint64_t hash_named(const std::map<std::string, torch::Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    if (!is_encoder(name)) continue;
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= tensor_hash(t);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

std::uint64_t encoder_hash(const torch::nn::Module& module) { return hash_named(live_tensors(module)); }
std::uint64_t encoder_hash(const Checkpoint& ckpt) { return hash_named(ckpt.tensors); }

std::vector<std::string> encoder_differences(const torch::nn::Module& a, const torch::nn::Module& b) {
  auto ta = live_tensors(a);
  auto tb = live_tensors(b);
  std::vector<std::string> diff;
  for (const auto& [name, t] : ta) {
    if (!is_encoder(name)) continue;
    auto it = tb.find(name);
    if (it == tb.end() || !t.sizes().equals(it->second.sizes()) || !torch::equal(t, it->second)) diff.push_back(name);
  }
  for (const auto& [name, t] : tb)
    if (is_encoder(name) && !ta.count(name)) diff.push_back(name);
  return diff;
}

}  // namespace icssn
