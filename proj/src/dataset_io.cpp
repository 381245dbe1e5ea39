#include "icssn/dataset_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <future>
#include <set>

#include "icssn/errors.hpp"

namespace icssn {

namespace fs = std::filesystem;

Tile read_tile_png(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ConfigError("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Tile t(rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) std::copy_n(rgb.ptr<std::uint8_t>(y), rgb.cols * 3, &t.at(y, 0, 0));
  return t;
}

void write_tile_png(const Tile& tile, const fs::path& path) {
  cv::Mat rgb(tile.height, tile.width, CV_8UC3, const_cast<std::uint8_t*>(tile.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw ConfigError("cannot write image " + path.string());
}

Mask read_mask_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw ConfigError("cannot read mask " + path.string());
  Mask out(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) out.at(y, x) = row[x] ? 1 : 0;
  }
  return out;
}

void write_mask_png(const Mask& mask, const fs::path& path) {
  cv::Mat m(mask.height, mask.width, CV_8UC1, const_cast<std::uint8_t*>(mask.labels.data()));
  if (!cv::imwrite(path.string(), m)) throw ConfigError("cannot write mask " + path.string());
}

nlohmann::json manifest_to_json(const DatasetManifest& m, const std::vector<Sample>& samples) {
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& s : samples) labels[s.id] = std::string(to_string(s.object_label));
  auto split_counts = [&](const std::vector<std::string>& ids) {
    std::size_t slide = 0;
    for (const auto& id : ids)
      if (labels.contains(id) && labels[id] == "landslide") ++slide;
    return nlohmann::json{{"landslide", slide}, {"slope", ids.size() - slide}};
  };
  return {{"seed", m.seed},
          {"preprocessed", m.preprocessed},
          {"splits", {{"train", m.train}, {"val", m.val}, {"test", m.test}}},
          {"counts",
           {{"landslide", m.landslide_count},
            {"slope", m.slope_count},
            {"train", split_counts(m.train)},
            {"val", split_counts(m.val)},
            {"test", split_counts(m.test)}}},
          {"labels", labels}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.preprocessed = j.value("preprocessed", false);
    const auto& splits = j.at("splits");
    m.train = splits.at("train").get<std::vector<std::string>>();
    m.val = splits.at("val").get<std::vector<std::string>>();
    m.test = splits.at("test").get<std::vector<std::string>>();
    if (j.contains("counts")) {
      m.landslide_count = j["counts"].value("landslide", std::size_t{0});
      m.slope_count = j["counts"].value("slope", std::size_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const DatasetManifest& manifest) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (const auto& s : samples) {
    write_tile_png(s.tile, dir / "images" / (s.id + ".png"));
    write_mask_png(s.mask, dir / "masks" / (s.id + ".png"));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + dir.string());
  out << manifest_to_json(manifest, samples).dump(1) << '\n';
}

void Dataset::reindex() {
  index.clear();
  for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].id] = i;
}

const Sample& Dataset::by_id(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw ConfigError("manifest references unknown sample '" + id + "'");
  return samples[it->second];
}

std::vector<Sample> Dataset::subset(const std::vector<std::string>& ids) const {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(by_id(id));
  return out;
}

Dataset read_dataset(const fs::path& dir, int workers) {
  if (!fs::is_directory(dir / "images") || !fs::is_directory(dir / "masks"))
    throw ConfigError(dir.string() + " does not contain images/ and masks/");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir / "images"))
    if (entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());

  Dataset ds;
  ds.samples.resize(ids.size());
  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(ids.size())));
  std::vector<std::future<void>> jobs;
  for (int w = 0; w < n_workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < ids.size(); i += static_cast<std::size_t>(n_workers)) {
        auto mask_path = dir / "masks" / (ids[i] + ".png");
        if (!fs::exists(mask_path)) throw ConfigError("no mask for image " + ids[i]);
        ds.samples[i] = make_sample(read_tile_png(dir / "images" / (ids[i] + ".png")), read_mask_png(mask_path), ids[i]);
        validate_sample(ds.samples[i]);
      }
    }));
  }
  for (auto& j : jobs) j.get();
  ds.reindex();

  if (fs::exists(dir / "manifest.json")) {
    std::ifstream in(dir / "manifest.json");
    try {
      ds.manifest = manifest_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
    ds.has_manifest = true;
  }
  return ds;
}

SplitSamples prepare_splits(const std::vector<Sample>& samples, const DatasetManifest& manifest, bool equalize,
                            int augmentations) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  auto take = [&](const std::vector<std::string>& ids) {
    std::vector<Sample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("manifest references unknown sample '" + id + "'");
      Sample s = *it->second;
      if (equalize) s.tile = equalize_histogram(s.tile);
      out.push_back(std::move(s));
    }
    return out;
  };
  SplitSamples out;
  out.train = expand_with_augmentations(take(manifest.train), augmentations);
  out.val = expand_with_augmentations(take(manifest.val), augmentations);
  out.test = take(manifest.test);
  return out;
}

SplitSamples load_splits(const fs::path& dir, bool equalize, int augmentations, int workers) {
  const Dataset ds = read_dataset(dir, workers);
  if (!ds.has_manifest) throw ConfigError(dir.string() + " has no manifest.json");
  if (!ds.manifest.preprocessed) return prepare_splits(ds.samples, ds.manifest, equalize, augmentations);
  return {ds.subset(ds.manifest.train), ds.subset(ds.manifest.val), ds.subset(ds.manifest.test)};
}

}  // namespace icssn
