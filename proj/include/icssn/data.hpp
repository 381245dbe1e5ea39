#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace icssn {

// Interleaved 8-bit RGB raster (row-major, HWC). Used both for whole scenes
// and for fixed-size tiles.
struct Tile {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
  double resolution_m = 2.0;

  Tile() = default;
  Tile(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const Tile&) const = default;
};

// Binary label raster: 0 = slope/background, 1 = landslide.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count_positive() const;
  bool operator==(const Mask&) const = default;
};

enum class ObjectLabel : std::uint8_t { slope = 0, landslide = 1 };

std::string_view to_string(ObjectLabel label);
ObjectLabel object_label_from_string(std::string_view name);

struct Sample {
  Tile tile;
  Mask mask;
  ObjectLabel object_label = ObjectLabel::slope;
  std::string id;

  bool operator==(const Sample&) const = default;
};

// Builds a sample and derives its object label from the mask.
Sample make_sample(Tile tile, Mask mask, std::string id);

// Throws ShapeError / ConfigError when a sample breaks the Tile/Mask/Sample invariants.
void validate_sample(const Sample& s, int tile_size = 0);

struct SplitRatios {
  int train = 6;
  int val = 2;
  int test = 2;
};

struct DatasetManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  std::size_t landslide_count = 0;
  std::size_t slope_count = 0;
  // True when the listed train/val ids are already equalized and augmented.
  bool preprocessed = false;
};

// Mirror index used for reflection padding ("reflect" mode: the edge pixel is
// not repeated). Works for offsets larger than the extent.
int reflect_index(int i, int n);

// Splits a scene into a non-overlapping grid of square tiles. The scene is
// padded by reflection up to a multiple of tile_size. Ids are
// "<prefix>_r<row>_c<col>".
std::vector<Sample> tile_raster(const Tile& raster, const Mask& mask_raster, int tile_size,
                                std::string_view id_prefix = "tile");

// Per-channel histogram equalization (cdf_min-anchored mapping onto [0,255]).
// A constant channel is returned unchanged.
Tile equalize_histogram(const Tile& tile);

enum class AugmentOp { identity, hflip, vflip, rot90, rot180, rot270 };

std::string_view to_string(AugmentOp op);
// Throws ConfigError for unknown names.
AugmentOp augment_op_from_string(std::string_view name);

inline constexpr std::array<AugmentOp, 5> kAugmentOps = {AugmentOp::hflip, AugmentOp::vflip, AugmentOp::rot90,
                                                         AugmentOp::rot180, AugmentOp::rot270};

// rot90 rotates counter-clockwise. The augmented id gets a "__<op>" suffix.
Sample augment_sample(const Sample& s, AugmentOp op);

// Identity plus the first `extra` entries of kAugmentOps.
std::vector<Sample> expand_with_augmentations(const std::vector<Sample>& samples, int extra = 5);

// Stratified by object label, deterministic in seed.
DatasetManifest split_dataset(const std::vector<Sample>& samples, SplitRatios ratios = {}, std::uint64_t seed = 0);

struct SynthConfig {
  int tile_size = 128;
  int landslide_count = 10;
  int slope_count = 10;
  int min_blobs = 1;
  int max_blobs = 1;
  int min_radius = 14;
  int max_radius = 30;
  // Brightening (in intensity units) applied to the blob rim.
  double boundary_contrast = 40.0;
  int rim_width = 3;
  // Mean shift and grain difference of the blob interior texture.
  double texture_shift = 12.0;
  double background_amplitude = 28.0;
  double grain_amplitude = 10.0;
  // Probability that a blob is horseshoe-shaped rather than a plain ellipse.
  double horseshoe_fraction = 0.5;
  std::string id_prefix = "synth";
};

void validate(const SynthConfig& cfg);

// Landslide samples come first; ids are "<prefix>_<index>". Pure in (cfg, seed).
std::vector<Sample> generate_synthetic_dataset(const SynthConfig& cfg, std::uint64_t seed);

// Pixels of the blob within `rim_width` (chessboard distance) of a non-blob pixel.
Mask boundary_band(const Mask& mask, int rim_width);

// splitmix64-based seed mixing; stable across platforms.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

}  // namespace icssn
