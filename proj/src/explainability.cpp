#include "icssn/explainability.hpp"

#include <algorithm>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "icssn/errors.hpp"
#include "icssn/tensors.hpp"

namespace icssn {

namespace {

Heatmap zero_heatmap(int h, int w, std::string target) {
  Heatmap m;
  m.height = h;
  m.width = w;
  m.values.assign(static_cast<std::size_t>(h) * w, 0.0f);
  m.target = std::move(target);
  m.degenerate = true;
  return m;
}

}  // namespace

Heatmap grad_cam_from(const torch::Tensor& features, const torch::Tensor& score, int height, int width,
                      std::string target) {
  if (features.dim() != 4 || features.size(0) != 1) throw ShapeError("grad_cam expects 1 x C x h x w features");
  auto grads = torch::autograd::grad({score}, {features}, {}, /*retain_graph=*/false, /*create_graph=*/false,
                                     /*allow_unused=*/true);
  if (grads.empty() || !grads[0].defined() || grads[0].abs().max().item<double>() == 0.0)
    return zero_heatmap(height, width, std::move(target));

  torch::NoGradGuard no_grad;
  auto weights = grads[0].mean({2, 3}, /*keepdim=*/true);
  auto cam = torch::relu((weights * features.detach()).sum(1, /*keepdim=*/true));
  cam = torch::nn::functional::interpolate(
      cam, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<std::int64_t>{height, width})
               .mode(torch::kBilinear)
               .align_corners(false));
  cam = cam.to(torch::kFloat32).reshape({height, width}).contiguous();
  const float lo = cam.min().item<float>();
  const float hi = cam.max().item<float>();
  if (!(hi - lo > 1e-12f)) return zero_heatmap(height, width, std::move(target));
  cam = (cam - lo) / (hi - lo);

  Heatmap m;
  m.height = height;
  m.width = width;
  m.target = std::move(target);
  m.values.assign(cam.data_ptr<float>(), cam.data_ptr<float>() + cam.numel());
  // Division can land a hair off the ends.
  for (auto& v : m.values) v = std::clamp(v, 0.0f, 1.0f);
  return m;
}

Heatmap grad_cam(SegmentationNet& net, const Tile& tile, const Mask* region) {
  net->eval();
  torch::AutoGradMode grad_on(true);
  auto features = net->encoder->forward(tile_to_tensor(tile));
  auto logits = net->decoder->forward(features);
  auto landslide = logits.select(1, 1)[0];

  torch::Tensor sel;
  std::string target = "landslide:truth";
  if (region && region->count_positive() > 0) {
    if (region->height != tile.height || region->width != tile.width)
      throw AlignmentError("grad_cam region does not match the tile");
    sel = mask_to_tensor(*region)[0].to(torch::kBool);
  } else {
    sel = logits.argmax(1)[0].to(torch::kBool);
    target = "landslide:predicted";
    if (sel.sum().item<std::int64_t>() == 0) {
      sel = torch::ones_like(sel);
      target = "landslide:all";
    }
  }
  auto score = landslide.masked_select(sel).sum();
  return grad_cam_from(features, score, tile.height, tile.width, target);
}

Heatmap grad_cam(ClassificationNet& net, const Tile& tile, JointClass target) {
  net->eval();
  torch::AutoGradMode grad_on(true);
  auto fa = net->encoder->forward(tile_to_tensor(tile));
  auto fb = fa.detach();
  auto log_probs = net->classifier->forward(fa, fb);
  auto score = log_probs[0][static_cast<int>(target)];
  return grad_cam_from(fa, score, tile.height, tile.width, "joint:" + std::string(to_string(target)));
}

Tile heatmap_overlay(const Tile& tile, const Heatmap& heat, double alpha) {
  if (heat.height != tile.height || heat.width != tile.width) throw AlignmentError("heatmap does not match the tile");
  cv::Mat gray(heat.height, heat.width, CV_8UC1);
  for (int y = 0; y < heat.height; ++y)
    for (int x = 0; x < heat.width; ++x)
      gray.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(heat.at(y, x) * 255.0f));
  cv::Mat colour;
  cv::applyColorMap(gray, colour, cv::COLORMAP_JET);
  cv::cvtColor(colour, colour, cv::COLOR_BGR2RGB);
  cv::Mat base(tile.height, tile.width, CV_8UC3, const_cast<std::uint8_t*>(tile.pixels.data()));
  cv::Mat blended;
  cv::addWeighted(colour, alpha, base, 1.0 - alpha, 0.0, blended);
  Tile out(tile.height, tile.width);
  out.resolution_m = tile.resolution_m;
  std::copy(blended.datastart, blended.dataend, out.pixels.begin());
  return out;
}

void write_heatmap_png(const Heatmap& heat, const std::filesystem::path& path) {
  cv::Mat gray(heat.height, heat.width, CV_8UC1);
  for (int y = 0; y < heat.height; ++y)
    for (int x = 0; x < heat.width; ++x)
      gray.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(heat.at(y, x) * 255.0f));
  if (!cv::imwrite(path.string(), gray)) throw Error("cannot write " + path.string());
}

BandHeat band_heat(const Heatmap& heat, const Mask& mask, int half_width) {
  if (heat.height != mask.height || heat.width != mask.width) throw AlignmentError("heatmap does not match the mask");
  Mask outside(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) outside.labels[i] = mask.labels[i] ? 0 : 1;
  const Mask inner = boundary_band(mask, half_width);
  const Mask outer = boundary_band(outside, half_width);
  BandHeat b;
  double band_sum = 0.0, interior_sum = 0.0;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (inner.labels[i] || outer.labels[i]) {
      band_sum += heat.values[i];
      ++b.band_pixels;
    } else if (mask.labels[i]) {
      interior_sum += heat.values[i];
      ++b.interior_pixels;
    }
  }
  if (b.band_pixels) b.band_mean = band_sum / static_cast<double>(b.band_pixels);
  if (b.interior_pixels) b.interior_mean = interior_sum / static_cast<double>(b.interior_pixels);
  return b;
}

}  // namespace icssn
