#pragma once

#include <string>
#include <vector>

#include "st/backbone.hpp"
#include "st/heads.hpp"

namespace st {

// One metric-learning task batch (outer or inner), images by pointer.
struct TaskBatch {
  std::vector<const LabeledImage*> support;
  std::vector<int> support_labels;
  std::vector<const LabeledImage*> query;
  std::vector<int> query_labels;
  std::vector<int> support_rotation_labels;  // empty = no rotation task
  int way = 0;
};

struct ObjectiveResult {
  double loss_fs = 0, loss_rot = 0, loss_total = 0;
  double accuracy = 0;
};

// Forward (and optionally backward) pass of the selected metric head plus
// the auxiliary rotation task over one batch. Gradient states must be
// zeros_like of the corresponding parameters.
ObjectiveResult episode_objective(Encoder& enc, const std::string& head, RelationModule* rel,
                                  const RotationHead* rot, double lambda, const TaskBatch& batch,
                                  bool squared_dist, bool update_stats, ParamState* enc_grads,
                                  ParamState* rel_grads, ParamState* rot_grads);

}  // namespace st
