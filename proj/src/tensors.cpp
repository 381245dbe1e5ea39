#include "icssn/tensors.hpp"

#include <cstring>

#include "icssn/errors.hpp"

namespace icssn {

torch::Tensor tiles_to_tensor(std::span<const Tile* const> tiles) {
  if (tiles.empty()) throw SizeError("no tiles to convert");
  const int h = tiles.front()->height;
  const int w = tiles.front()->width;
  auto out = torch::empty({static_cast<std::int64_t>(tiles.size()), 3, h, w}, torch::kFloat32);
  auto acc = out.accessor<float, 4>();
  for (std::size_t b = 0; b < tiles.size(); ++b) {
    const Tile& t = *tiles[b];
    if (t.height != h || t.width != w) throw ShapeError("tiles in one batch must share a size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          acc[b][c][y][x] = (static_cast<float>(t.at(y, x, c)) / 255.0f - kInputMean) / kInputStd;
  }
  return out;
}

torch::Tensor tile_to_tensor(const Tile& tile) {
  const Tile* p = &tile;
  return tiles_to_tensor(std::span<const Tile* const>(&p, 1));
}

torch::Tensor masks_to_tensor(std::span<const Mask* const> masks) {
  if (masks.empty()) throw SizeError("no masks to convert");
  const int h = masks.front()->height;
  const int w = masks.front()->width;
  auto out = torch::empty({static_cast<std::int64_t>(masks.size()), h, w}, torch::kInt64);
  auto* dst = out.data_ptr<std::int64_t>();
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const Mask& m = *masks[b];
    if (m.height != h || m.width != w) throw ShapeError("masks in one batch must share a size");
    for (std::size_t i = 0; i < m.labels.size(); ++i) dst[b * m.labels.size() + i] = m.labels[i];
  }
  return out;
}

torch::Tensor mask_to_tensor(const Mask& mask) {
  const Mask* p = &mask;
  return masks_to_tensor(std::span<const Mask* const>(&p, 1));
}

Mask tensor_to_mask(const torch::Tensor& labels) {
  auto t = labels.squeeze().to(torch::kUInt8).contiguous();
  if (t.dim() != 2) throw ShapeError("expected a single H x W label map");
  Mask m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
  std::memcpy(m.labels.data(), t.data_ptr<std::uint8_t>(), m.labels.size());
  return m;
}

std::uint64_t tensor_hash(const torch::Tensor& t) {
  auto c = t.detach().contiguous().cpu();
  const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
  const std::size_t n = static_cast<std::size_t>(c.numel()) * c.element_size();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace icssn
