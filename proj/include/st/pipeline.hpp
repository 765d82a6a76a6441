#pragma once

#include "st/expand.hpp"
#include "st/inner.hpp"
#include "st/model.hpp"

namespace st {

// Localize the support objects and build S' according to the ablation
// toggles. WSOL is skipped entirely when only whole-image rotations are
// requested (or no variants at all). Optional outputs expose the
// localization results for visualization.
ExpandedSupportSet expand_support(Model& model, const std::vector<LabeledImage>& support,
                                  const TrainConfig& cfg, RngStream& rng,
                                  std::vector<FgBgPair>* out_pairs = nullptr,
                                  std::vector<ObjectBox>* out_boxes = nullptr);

InnerConfig inner_config_from(const TrainConfig& cfg, int alpha);

// Task-decomposition: alpha inner steps on a parameter clone, then load
// theta' into the model. Returns the inner loss trace.
std::vector<double> adapt_in_place(Model& model, const ExpandedSupportSet& sprime,
                                   const TrainConfig& cfg, int alpha, RngStream& rng);

}  // namespace st
