#include "icssn/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "icssn/errors.hpp"

namespace icssn {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  is >> v;
  if (is.fail() || !is.eof()) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + text + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// One binding per config key; order defines the canonical dump.
std::vector<Field> bind(Config& c) {
  std::vector<Field> f;
  auto add_int = [&](const char* sec, const char* key, int& ref) {
    const std::string k = std::string(sec) + "." + key;
    f.push_back({sec, key, [&ref] { return std::to_string(ref); }, [&ref, k](const std::string& s) { ref = parse_number<int>(k, s); }});
  };
  auto add_u64 = [&](const char* sec, const char* key, std::uint64_t& ref) {
    const std::string k = std::string(sec) + "." + key;
    f.push_back({sec, key, [&ref] { return std::to_string(ref); },
                 [&ref, k](const std::string& s) { ref = parse_number<std::uint64_t>(k, s); }});
  };
  auto add_double = [&](const char* sec, const char* key, double& ref) {
    const std::string k = std::string(sec) + "." + key;
    f.push_back({sec, key, [&ref] { return format_double(ref); },
                 [&ref, k](const std::string& s) { ref = parse_number<double>(k, s); }});
  };
  auto add_bool = [&](const char* sec, const char* key, bool& ref) {
    const std::string k = std::string(sec) + "." + key;
    f.push_back({sec, key, [&ref] { return std::string(ref ? "true" : "false"); },
                 [&ref, k](const std::string& s) { ref = parse_bool(k, s); }});
  };
  auto add_string = [&](const char* sec, const char* key, std::string& ref) {
    f.push_back({sec, key, [&ref] { return ref; }, [&ref](const std::string& s) { ref = s; }});
  };

  add_int("data", "tile_size", c.data.tile_size);
  add_int("data", "augmentations", c.data.augmentations);
  f.push_back({"data", "split",
               [&c] {
                 return std::to_string(c.data.split.train) + ":" + std::to_string(c.data.split.val) + ":" +
                        std::to_string(c.data.split.test);
               },
               [&c](const std::string& s) {
                 int a = 0, b = 0, d = 0;
                 char tail = 0;
                 if (std::sscanf(s.c_str(), "%d:%d:%d%c", &a, &b, &d, &tail) != 3)
                   throw ConfigError("data.split must look like 6:2:2, got '" + s + "'");
                 c.data.split = {a, b, d};
               }});
  add_bool("data", "equalize", c.data.equalize);
  add_double("data", "resolution_m", c.data.resolution_m);

  add_int("synth", "tile_size", c.synth.tile_size);
  add_int("synth", "landslide_count", c.synth.landslide_count);
  add_int("synth", "slope_count", c.synth.slope_count);
  add_int("synth", "min_blobs", c.synth.min_blobs);
  add_int("synth", "max_blobs", c.synth.max_blobs);
  add_int("synth", "min_radius", c.synth.min_radius);
  add_int("synth", "max_radius", c.synth.max_radius);
  add_double("synth", "boundary_contrast", c.synth.boundary_contrast);
  add_int("synth", "rim_width", c.synth.rim_width);
  add_double("synth", "texture_shift", c.synth.texture_shift);
  add_double("synth", "background_amplitude", c.synth.background_amplitude);
  add_double("synth", "grain_amplitude", c.synth.grain_amplitude);
  add_double("synth", "horseshoe_fraction", c.synth.horseshoe_fraction);
  add_string("synth", "id_prefix", c.synth.id_prefix);

  add_int("encoder", "backbone_depth", c.encoder.backbone_depth);
  add_int("encoder", "base_width", c.encoder.base_width);
  add_int("encoder", "output_channels", c.encoder.output_channels);
  f.push_back({"encoder", "aspp_dilations",
               [&c] {
                 std::string s;
                 for (std::size_t i = 0; i < c.encoder.aspp_dilations.size(); ++i)
                   s += (i ? "," : "") + std::to_string(c.encoder.aspp_dilations[i]);
                 return s;
               },
               [&c](const std::string& s) {
                 std::vector<int> out;
                 std::stringstream ss(s);
                 std::string item;
                 while (std::getline(ss, item, ',')) out.push_back(parse_number<int>("encoder.aspp_dilations", trim(item)));
                 c.encoder.aspp_dilations = out;
               }});
  add_int("encoder", "se_reduction", c.encoder.se_reduction);

  add_int("classifier", "hidden_units", c.classifier.hidden_units);
  f.push_back({"classifier", "pooling", [&c] { return std::string(to_string(c.classifier.pooling)); },
               [&c](const std::string& s) { c.classifier.pooling = pooling_from_string(s); }});
  add_int("classifier", "fc_layers", c.classifier.fc_layers);
  f.push_back({"classifier", "head", [&c] { return std::string(to_string(c.classifier.head)); },
               [&c](const std::string& s) { c.classifier.head = head_from_string(s); }});

  add_double("segmentation", "lambda", c.segmentation.lambda);
  add_double("segmentation", "decoder_dropout", c.decoder_dropout);

  add_double("socl", "tau", c.segmentation.tau);
  add_int("socl", "n_pos", c.segmentation.n_pos);
  add_int("socl", "n_neg", c.segmentation.n_neg);
  f.push_back({"socl", "strategy", [&c] { return std::string(to_string(c.segmentation.strategy)); },
               [&c](const std::string& s) { c.segmentation.strategy = block_strategy_from_string(s); }});
  add_int("socl", "block", c.segmentation.thresholds.block);
  add_int("socl", "lo", c.segmentation.thresholds.lo);
  add_int("socl", "hi", c.segmentation.thresholds.hi);

  add_string("training", "optimizer", c.training.optimizer);
  add_double("training", "momentum", c.training.momentum);
  add_double("training", "lr_classification", c.training.lr_classification);
  add_double("training", "lr_segmentation", c.training.lr_segmentation);
  add_double("training", "weight_decay", c.training.weight_decay);
  add_int("training", "batch_size", c.training.batch_size);
  add_int("training", "workers", c.training.workers);
  add_string("training", "schedule", c.training.schedule);
  add_int("training", "epochs_classification", c.training.epochs_classification);
  add_int("training", "epochs_segmentation", c.training.epochs_segmentation);
  add_int("training", "epochs_warmup", c.training.epochs_warmup);
  add_int("training", "max_rounds", c.training.max_rounds);
  add_int("training", "patience", c.training.patience);
  add_double("training", "min_delta", c.training.min_delta);
  add_u64("training", "seed", c.training.seed);
  add_bool("training", "deterministic", c.training.deterministic);

  add_int("metrics", "landslide_hit_threshold", c.object_rule.landslide_hit_threshold);
  add_int("metrics", "slope_fp_threshold", c.object_rule.slope_fp_threshold);
  add_int("metrics", "reference_area", c.object_rule.reference_area);
  return f;
}

}  // namespace

void validate(const TrainingConfig& cfg) {
  if (cfg.optimizer != "sgd") throw ConfigError("only the 'sgd' optimizer is supported");
  if (cfg.schedule != "cosine" && cfg.schedule != "constant")
    throw ConfigError("schedule must be 'cosine' or 'constant'");
  if (!(cfg.lr_classification > 0.0) || !(cfg.lr_segmentation > 0.0)) throw ConfigError("learning rates must be positive");
  if (cfg.momentum < 0.0 || cfg.weight_decay < 0.0) throw ConfigError("momentum and weight decay must be nonnegative");
  if (cfg.batch_size < 1 || cfg.workers < 1) throw ConfigError("batch_size and workers must be positive");
  if (cfg.epochs_classification < 1 || cfg.epochs_segmentation < 1 || cfg.epochs_warmup < 1)
    throw ConfigError("epoch caps must be positive");
  if (cfg.max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
  if (cfg.patience < 1) throw ConfigError("patience must be at least 1");
  if (cfg.min_delta < 0.0) throw ConfigError("min_delta must be nonnegative");
}

void validate(const Config& cfg) {
  if (cfg.data.tile_size <= 0 || cfg.data.tile_size % 8 != 0)
    throw ConfigError("data.tile_size must be a positive multiple of 8");
  if (cfg.data.augmentations < 0 || cfg.data.augmentations > 5)
    throw ConfigError("data.augmentations must be in [0, 5]");
  validate(cfg.synth);
  validate(cfg.encoder);
  validate(cfg.classifier);
  validate(cfg.segmentation);
  if (cfg.decoder_dropout < 0.0 || cfg.decoder_dropout >= 1.0)
    throw ConfigError("segmentation.decoder_dropout must be in [0, 1)");
  validate(cfg.training);
  if (cfg.object_rule.landslide_hit_threshold <= 0 || cfg.object_rule.slope_fp_threshold <= 0 ||
      cfg.object_rule.reference_area <= 0)
    throw ConfigError("metrics thresholds must be positive");
}

Config parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  Config cfg;
  auto fields = bind(cfg);
  std::map<std::string, Field*> by_name;
  std::set<std::string> sections;
  for (auto& f : fields) {
    by_name[f.section + "." + f.key] = &f;
    sections.insert(f.section);
  }
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      auto it = by_name.find(section + "." + key);
      if (it == by_name.end()) throw ConfigError("unknown config key '" + key + "' in [" + section + "]");
      it->second->set(trim(value.get_value<std::string>()));
    }
  }
  validate(cfg);
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const Config& cfg) {
  Config copy = cfg;
  auto fields = bind(copy);
  std::string out;
  std::string current;
  for (const auto& f : fields) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

void save_config(const Config& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << to_ini(cfg);
}

std::string config_hash(const Config& cfg) {
  const std::string text = to_ini(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace icssn
