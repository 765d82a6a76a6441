#pragma once

#include <optional>
#include <vector>

#include "st/backbone.hpp"
#include "st/data.hpp"

namespace st {

struct ActivationMap {
  int h = 0, w = 0;          // native resolution
  std::vector<double> values;
  int H = 0, W = 0;          // image resolution
  std::vector<double> upsampled;
};

// Square object region, fully inside the image.
struct ObjectBox {
  int top = 0, left = 0, side = 1;
  Box as_box() const { return Box{top, left, side, side}; }
};

// Small square RGB patch (CHW).
struct Patch {
  int side = 0;
  std::vector<double> pix;  // 3 * side * side
  double at(int c, int y, int x) const { return pix[size_t((c * side + y) * side + x)]; }
  double& at(int c, int y, int x) { return pix[size_t((c * side + y) * side + x)]; }
};

struct FgBgPair {
  Patch foreground;
  LabeledImage background;  // full image; the box region is replaced on compose
  ObjectBox box;
};

// Class-agnostic CAM: per-pixel channel mean through ReLU, bilinearly
// upsampled to the image grid.
ActivationMap cam(const FeatureMap& map, int image_side);

// Channel-weighted variant (weights typically a class prototype).
ActivationMap cam_weighted(const FeatureMap& map, const std::vector<double>& weights,
                           int image_side);

// mask[y*W+x] = upsampled >= tau * max(upsampled); all-false for an
// all-zero map.
std::vector<uint8_t> auto_threshold(const ActivationMap& act, double tau = 0.2);

// Largest 4-connected component (ties broken by smallest top-left raster
// index), tight box expanded to a square and clamped inside bounds.
// nullopt on an empty mask.
std::optional<ObjectBox> largest_component_box(const std::vector<uint8_t>& mask, int H, int W);

// Splits an image at the box. With no box (empty-mask fallback) a
// centered square of side ceil(0.6*H) is used.
FgBgPair split_fg_bg(const LabeledImage& image, std::optional<ObjectBox> box);

// Pastes the foreground back at the box; split then recompose is lossless.
LabeledImage recompose(const FgBgPair& pair);

// Full pipeline: encode -> CAM -> threshold -> largest component ->
// split, with the fallback applied on an empty mask. block selects the
// encoder block whose post-ReLU activations feed the heatmap; -1 (or the
// last index) uses the final feature map.
FgBgPair locate_and_split(Encoder& enc, const LabeledImage& image, double tau,
                          const std::vector<double>* cam_weights = nullptr,
                          ObjectBox* out_box = nullptr, int block = -1);

}  // namespace st
