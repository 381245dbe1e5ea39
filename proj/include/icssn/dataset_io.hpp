#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icssn/data.hpp"

namespace icssn {

// PNG codecs. Tiles are RGB; masks are single-channel with values {0,1}
// (any nonzero value reads back as 1).
Tile read_tile_png(const std::filesystem::path& path);
void write_tile_png(const Tile& tile, const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const Mask& mask, const std::filesystem::path& path);

nlohmann::json manifest_to_json(const DatasetManifest& m, const std::vector<Sample>& samples);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Directory layout: images/<id>.png, masks/<id>.png, manifest.json.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   const DatasetManifest& manifest);

struct Dataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;
  bool has_manifest = false;
  std::map<std::string, std::size_t> index;  // id -> position in samples

  void reindex();
  // Throws ConfigError for unknown ids.
  const Sample& by_id(const std::string& id) const;
  std::vector<Sample> subset(const std::vector<std::string>& ids) const;
};

// Reads every image with a matching mask; `workers` threads decode in parallel.
Dataset read_dataset(const std::filesystem::path& dir, int workers = 1);

struct SplitSamples {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Equalizes (optional) every sample, splits per manifest, and augments the
// train/val splits with `augmentations` extra transforms per sample.
SplitSamples prepare_splits(const std::vector<Sample>& samples, const DatasetManifest& manifest, bool equalize,
                            int augmentations);

// Reads a dataset directory (manifest required). Preprocessed datasets are
// taken as-is; raw ones go through prepare_splits.
SplitSamples load_splits(const std::filesystem::path& dir, bool equalize, int augmentations, int workers = 1);

}  // namespace icssn
