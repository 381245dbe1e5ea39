#include "icssn/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>
#include <utility>

#include "icssn/errors.hpp"

namespace icssn {

Tile::Tile(int h, int w, std::uint8_t fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

Mask::Mask(int h, int w, std::uint8_t fill) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

std::size_t Mask::count_positive() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

std::string_view to_string(ObjectLabel label) { return label == ObjectLabel::landslide ? "landslide" : "slope"; }

ObjectLabel object_label_from_string(std::string_view name) {
  if (name == "landslide") return ObjectLabel::landslide;
  if (name == "slope") return ObjectLabel::slope;
  throw ConfigError("unknown object label '" + std::string(name) + "'");
}

Sample make_sample(Tile tile, Mask mask, std::string id) {
  Sample s;
  s.object_label = mask.count_positive() > 0 ? ObjectLabel::landslide : ObjectLabel::slope;
  s.tile = std::move(tile);
  s.mask = std::move(mask);
  s.id = std::move(id);
  return s;
}

void validate_sample(const Sample& s, int tile_size) {
  const auto& t = s.tile;
  if (t.pixels.size() != static_cast<std::size_t>(t.height) * t.width * 3)
    throw ShapeError("tile '" + s.id + "' does not hold exactly 3 channels");
  if (tile_size > 0 && (t.height != tile_size || t.width != tile_size))
    throw ShapeError("tile '" + s.id + "' is " + std::to_string(t.height) + "x" + std::to_string(t.width) +
                     ", expected " + std::to_string(tile_size));
  if (s.mask.height != t.height || s.mask.width != t.width ||
      s.mask.labels.size() != static_cast<std::size_t>(t.height) * t.width)
    throw AlignmentError("mask of '" + s.id + "' does not match its tile");
  if (std::any_of(s.mask.labels.begin(), s.mask.labels.end(), [](std::uint8_t v) { return v > 1; }))
    throw ConfigError("mask of '" + s.id + "' is not binary");
  const bool has_slide = s.mask.count_positive() > 0;
  if (has_slide != (s.object_label == ObjectLabel::landslide))
    throw ConfigError("object label of '" + s.id + "' disagrees with its mask");
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

std::vector<Sample> tile_raster(const Tile& raster, const Mask& mask_raster, int tile_size,
                                std::string_view id_prefix) {
  if (tile_size <= 0) throw ConfigError("tile_size must be positive");
  if (raster.height != mask_raster.height || raster.width != mask_raster.width)
    throw AlignmentError("raster is " + std::to_string(raster.height) + "x" + std::to_string(raster.width) +
                         " but mask is " + std::to_string(mask_raster.height) + "x" +
                         std::to_string(mask_raster.width));
  if (raster.height == 0 || raster.width == 0) return {};

  const int rows = (raster.height + tile_size - 1) / tile_size;
  const int cols = (raster.width + tile_size - 1) / tile_size;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Tile tile(tile_size, tile_size);
      tile.resolution_m = raster.resolution_m;
      Mask mask(tile_size, tile_size);
      for (int y = 0; y < tile_size; ++y) {
        const int sy = reflect_index(r * tile_size + y, raster.height);
        for (int x = 0; x < tile_size; ++x) {
          const int sx = reflect_index(c * tile_size + x, raster.width);
          for (int ch = 0; ch < 3; ++ch) tile.at(y, x, ch) = raster.at(sy, sx, ch);
          mask.at(y, x) = mask_raster.at(sy, sx);
        }
      }
      out.push_back(make_sample(std::move(tile), std::move(mask),
                                std::string(id_prefix) + "_r" + std::to_string(r) + "_c" + std::to_string(c)));
    }
  }
  return out;
}

Tile equalize_histogram(const Tile& tile) {
  Tile out = tile;
  const std::size_t n = static_cast<std::size_t>(tile.height) * tile.width;
  if (n == 0) return out;
  for (int ch = 0; ch < 3; ++ch) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < n; ++i) ++hist[tile.pixels[i * 3 + ch]];
    std::array<std::size_t, 256> cdf{};
    std::size_t running = 0;
    for (int v = 0; v < 256; ++v) cdf[v] = running += hist[v];
    const std::size_t cdf_min = *std::find_if(cdf.begin(), cdf.end(), [](std::size_t c) { return c > 0; });
    if (cdf_min == n) continue;  // constant channel
    std::array<std::uint8_t, 256> lut{};
    const double scale = 255.0 / static_cast<double>(n - cdf_min);
    for (int v = 0; v < 256; ++v) {
      const double mapped = cdf[v] < cdf_min ? 0.0 : std::round(static_cast<double>(cdf[v] - cdf_min) * scale);
      lut[v] = static_cast<std::uint8_t>(std::clamp(mapped, 0.0, 255.0));
    }
    for (std::size_t i = 0; i < n; ++i) out.pixels[i * 3 + ch] = lut[tile.pixels[i * 3 + ch]];
  }
  return out;
}

std::string_view to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::identity: return "identity";
    case AugmentOp::hflip: return "hflip";
    case AugmentOp::vflip: return "vflip";
    case AugmentOp::rot90: return "rot90";
    case AugmentOp::rot180: return "rot180";
    case AugmentOp::rot270: return "rot270";
  }
  return "identity";
}

AugmentOp augment_op_from_string(std::string_view name) {
  for (auto op : {AugmentOp::identity, AugmentOp::hflip, AugmentOp::vflip, AugmentOp::rot90, AugmentOp::rot180,
                  AugmentOp::rot270})
    if (to_string(op) == name) return op;
  throw ConfigError("unknown augmentation '" + std::string(name) + "'");
}

namespace {

// Source coordinate for destination (y, x) of an output with dims (oh, ow).
std::pair<int, int> source_of(AugmentOp op, int y, int x, int h, int w) {
  switch (op) {
    case AugmentOp::identity: return {y, x};
    case AugmentOp::hflip: return {y, w - 1 - x};
    case AugmentOp::vflip: return {h - 1 - y, x};
    case AugmentOp::rot90: return {x, w - 1 - y};  // counter-clockwise; output is w x h
    case AugmentOp::rot180: return {h - 1 - y, w - 1 - x};
    case AugmentOp::rot270: return {h - 1 - x, y};
  }
  return {y, x};
}

}  // namespace

Sample augment_sample(const Sample& s, AugmentOp op) {
  const int h = s.tile.height;
  const int w = s.tile.width;
  const bool swaps = op == AugmentOp::rot90 || op == AugmentOp::rot270;
  const int oh = swaps ? w : h;
  const int ow = swaps ? h : w;
  Sample out;
  out.tile = Tile(oh, ow);
  out.tile.resolution_m = s.tile.resolution_m;
  out.mask = Mask(oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const auto [sy, sx] = source_of(op, y, x, h, w);
      for (int ch = 0; ch < 3; ++ch) out.tile.at(y, x, ch) = s.tile.at(sy, sx, ch);
      out.mask.at(y, x) = s.mask.at(sy, sx);
    }
  }
  out.object_label = s.object_label;
  out.id = op == AugmentOp::identity ? s.id : s.id + "__" + std::string(to_string(op));
  return out;
}

std::vector<Sample> expand_with_augmentations(const std::vector<Sample>& samples, int extra) {
  if (extra < 0 || extra > static_cast<int>(kAugmentOps.size()))
    throw ConfigError("augmentation multiplicity must be in [0, 5]");
  std::vector<Sample> out;
  out.reserve(samples.size() * (1 + extra));
  for (const auto& s : samples) {
    out.push_back(s);
    for (int k = 0; k < extra; ++k) out.push_back(augment_sample(s, kAugmentOps[k]));
  }
  return out;
}

DatasetManifest split_dataset(const std::vector<Sample>& samples, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || ratios.train + ratios.val + ratios.test == 0)
    throw ConfigError("split ratios must be nonnegative with a positive sum");
  const int parts = (ratios.train > 0) + (ratios.val > 0) + (ratios.test > 0);
  if (samples.size() < static_cast<std::size_t>(parts))
    throw SizeError("need at least " + std::to_string(parts) + " samples to split, got " +
                    std::to_string(samples.size()));

  DatasetManifest m;
  m.seed = seed;
  const double total = ratios.train + ratios.val + ratios.test;
  const std::array<double, 3> weights = {ratios.train / total, ratios.val / total, ratios.test / total};

  for (auto label : {ObjectLabel::landslide, ObjectLabel::slope}) {
    std::vector<std::string> ids;
    for (const auto& s : samples)
      if (s.object_label == label) ids.push_back(s.id);
    (label == ObjectLabel::landslide ? m.landslide_count : m.slope_count) = ids.size();
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    std::shuffle(ids.begin(), ids.end(), rng);

    // Largest-remainder apportionment keeps every split within one sample of its quota.
    const std::size_t n = ids.size();
    std::array<std::size_t, 3> counts{};
    std::array<std::pair<double, int>, 3> remainders{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = weights[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(quota));
      remainders[k] = {quota - std::floor(quota), -k};
      assigned += counts[k];
    }
    std::sort(remainders.begin(), remainders.end(), std::greater<>());
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[-remainders[k % 3].second];

    auto it = ids.begin();
    std::array<std::vector<std::string>*, 3> dst = {&m.train, &m.val, &m.test};
    for (int k = 0; k < 3; ++k) {
      dst[k]->insert(dst[k]->end(), it, it + static_cast<std::ptrdiff_t>(counts[k]));
      it += static_cast<std::ptrdiff_t>(counts[k]);
    }
  }
  return m;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (value + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view key) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed, h);
}

void validate(const SynthConfig& cfg) {
  if (cfg.tile_size <= 0 || cfg.tile_size % 8 != 0) throw ConfigError("synthetic tile_size must be a positive multiple of 8");
  if (cfg.landslide_count < 0 || cfg.slope_count < 0) throw ConfigError("sample counts must be nonnegative");
  if (cfg.min_blobs < 1 || cfg.max_blobs < cfg.min_blobs) throw ConfigError("blob count range is invalid");
  if (cfg.min_radius < 2 || cfg.max_radius < cfg.min_radius) throw ConfigError("blob radius range is invalid");
  if (2 * cfg.max_radius + 2 > cfg.tile_size)
    throw ConfigError("blob radius " + std::to_string(cfg.max_radius) + " does not fit a " +
                      std::to_string(cfg.tile_size) + " px tile");
  if (cfg.rim_width < 1) throw ConfigError("rim_width must be at least 1");
  if (cfg.boundary_contrast < 0.0) throw ConfigError("boundary_contrast must be nonnegative");
}

namespace {

// Smooth noise: a coarse random lattice, bilinearly interpolated.
std::vector<double> smooth_noise(int size, int cell, std::mt19937_64& rng) {
  const int g = size / cell + 2;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> lattice(static_cast<std::size_t>(g) * g);
  for (auto& v : lattice) v = normal(rng);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      auto L = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * g + xx]; };
      out[static_cast<std::size_t>(y) * size + x] =
          (1 - ty) * ((1 - tx) * L(y0, x0) + tx * L(y0, x0 + 1)) + ty * ((1 - tx) * L(y0 + 1, x0) + tx * L(y0 + 1, x0 + 1));
    }
  }
  return out;
}

void paint_blob(Mask& mask, const SynthConfig& cfg, std::mt19937_64& rng) {
  const int n = cfg.tile_size;
  std::uniform_int_distribution<int> radius(cfg.min_radius, cfg.max_radius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double a = radius(rng);
  const double b = std::max<double>(cfg.min_radius, a * (0.6 + 0.4 * unit(rng)));
  const double theta = unit(rng) * std::numbers::pi;
  const double margin = a + 1.0;
  const double cx = margin + unit(rng) * (n - 2 * margin);
  const double cy = margin + unit(rng) * (n - 2 * margin);
  const bool horseshoe = unit(rng) < cfg.horseshoe_fraction;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  // The carved-out ellipse sits toward the toe, leaving a curved back wall.
  const double ix = cx + 0.5 * a * c;
  const double iy = cy + 0.5 * a * s;
  const double ia = 0.6 * a;
  const double ib = 0.55 * b;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double u = (dx * c + dy * s) / a;
      const double v = (-dx * s + dy * c) / b;
      if (u * u + v * v > 1.0) continue;
      if (horseshoe) {
        const double ex = x - ix;
        const double ey = y - iy;
        const double iu = (ex * c + ey * s) / ia;
        const double iv = (-ex * s + ey * c) / ib;
        if (iu * iu + iv * iv <= 1.0) continue;
      }
      mask.at(y, x) = 1;
    }
  }
}

Sample synthesize_one(const SynthConfig& cfg, bool landslide, std::uint64_t seed, std::string id) {
  std::mt19937_64 rng(seed);
  const int n = cfg.tile_size;
  Mask mask(n, n);
  if (landslide) {
    std::uniform_int_distribution<int> blobs(cfg.min_blobs, cfg.max_blobs);
    const int count = blobs(rng);
    for (int k = 0; k < count; ++k) paint_blob(mask, cfg, rng);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::array<double, 3> base = {135.0 + 20.0 * unit(rng), 118.0 + 20.0 * unit(rng), 92.0 + 20.0 * unit(rng)};
  const auto broad = smooth_noise(n, std::max(4, n / 6), rng);
  const auto fine = smooth_noise(n, 3, rng);
  const auto interior = smooth_noise(n, 2, rng);
  std::normal_distribution<double> grain(0.0, 1.0);
  const Mask rim = landslide ? boundary_band(mask, cfg.rim_width) : Mask(n, n);

  Tile tile(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      double shade = cfg.background_amplitude * broad[i] + 0.5 * cfg.grain_amplitude * fine[i];
      const double g = grain(rng);
      if (mask.labels[i]) {
        // Disturbed ground: lighter, coarser-grained than the surrounding slope.
        shade += cfg.texture_shift + cfg.grain_amplitude * interior[i];
        if (rim.labels[i]) shade += cfg.boundary_contrast;
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double tint = mask.labels[i] && ch == 0 ? 0.3 * cfg.texture_shift : 0.0;
        const double value = base[ch] + shade + tint + 3.0 * g;
        tile.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    }
  }
  return make_sample(std::move(tile), std::move(mask), std::move(id));
}

}  // namespace

Mask boundary_band(const Mask& mask, int rim_width) {
  const int h = mask.height;
  const int w = mask.width;
  // Chessboard distance to the nearest non-blob pixel.
  std::vector<int> dist(static_cast<std::size_t>(h) * w, -1);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!mask.at(y, x)) {
        dist[static_cast<std::size_t>(y) * w + x] = 0;
        queue.emplace_back(y, x);
      }
  while (!queue.empty()) {
    const auto [y, x] = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(y) * w + x];
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy;
        const int nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        int& nd = dist[static_cast<std::size_t>(ny) * w + nx];
        if (nd == -1) {
          nd = d + 1;
          queue.emplace_back(ny, nx);
        }
      }
  }
  Mask band(h, w);
  for (std::size_t i = 0; i < band.labels.size(); ++i)
    band.labels[i] = mask.labels[i] && dist[i] >= 0 && dist[i] <= rim_width ? 1 : 0;
  return band;
}

std::vector<Sample> generate_synthetic_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.landslide_count + cfg.slope_count));
  const int total = cfg.landslide_count + cfg.slope_count;
  for (int k = 0; k < total; ++k) {
    const bool landslide = k < cfg.landslide_count;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", k);
    out.push_back(synthesize_one(cfg, landslide, mix_seed(seed, static_cast<std::uint64_t>(k)),
                                 cfg.id_prefix + "_" + buf));
  }
  return out;
}

}  // namespace icssn
