#pragma once

#include <vector>

#include "st/data.hpp"
#include "st/rng.hpp"
#include "st/wsol.hpp"

namespace st {

struct ExpandedSample {
  LabeledImage image;     // class_id carries the episode-local label
  int rotation_label = 0; // applied angle / 90
  int src_index = 0;      // foreground donor in the support set
  int bg_index = 0;       // background donor
  int angle = 0;          // degrees
};

struct ExpandedSupportSet {
  std::vector<ExpandedSample> samples;
  std::vector<std::vector<int>> by_class;  // sample indices per episode-local class
};

struct ExpandConfig {
  bool wsol_rot = true;      // self-rotations of the localized region
  bool wsol_exc_rot = true;  // rotate + exchange across backgrounds
  bool whole_rot = false;    // whole-image rotations instead of WSOL variants
  int g_self = 1;
  int g_exch = 3;
  double p_rc = 0.5;         // random-convolution probability (0 disables)
};

// Exact 90-degree-multiple rotation of a square patch, no interpolation.
Patch rotate_patch(const Patch& patch, int angle);
LabeledImage rotate_image(const LabeledImage& image, int angle);

// Bilinear resize to a new side; identity when sides match.
Patch resize_patch(const Patch& patch, int new_side);

// Stitches the rotated foreground of fg_donor into bg_donor's background
// at bg_donor's box, then (optionally) applies random-convolution
// smoothing.
ExpandedSample compose(const FgBgPair& fg_donor, const FgBgPair& bg_donor, int angle,
                       RngStream& rng, double p_rc);

// With probability p_rc convolves all channels with one random 3x3
// kernel normalized to sum to 1 (reflect padding, clipped to [0,1]).
LabeledImage random_conv_smooth(const LabeledImage& image, RngStream& rng, double p_rc);

// Builds S': all originals (rotation label 0) plus per-sample variants
// according to the config. Exchanges are skipped when there is a single
// support sample.
ExpandedSupportSet build_expanded_set(const std::vector<LabeledImage>& support,
                                      const std::vector<FgBgPair>& wsol_results,
                                      const ExpandConfig& cfg, RngStream& rng);

}  // namespace st
