#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "icssn/data.hpp"

namespace icssn {

// Per-channel normalization applied to tiles before they enter the encoder.
inline constexpr float kInputMean = 0.5f;
inline constexpr float kInputStd = 0.25f;

// B x 3 x H x W float tensor; all tiles must share one size.
torch::Tensor tiles_to_tensor(std::span<const Tile* const> tiles);
torch::Tensor tile_to_tensor(const Tile& tile);

// B x H x W int64 tensor of {0,1}.
torch::Tensor masks_to_tensor(std::span<const Mask* const> masks);
torch::Tensor mask_to_tensor(const Mask& mask);

// Inverse of mask_to_tensor for a single H x W (or 1 x H x W) label tensor.
Mask tensor_to_mask(const torch::Tensor& labels);

// Content hash of a tensor's bytes (FNV-1a); used to assert bit-identity.
std::uint64_t tensor_hash(const torch::Tensor& t);

}  // namespace icssn
