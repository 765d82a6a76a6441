#pragma once

#include <optional>

#include "st/expand.hpp"
#include "st/heads.hpp"
#include "st/objective.hpp"

namespace st {

struct InnerEpisode {
  std::vector<int> support_idx;  // into ExpandedSupportSet::samples
  std::vector<int> query_idx;
  bool reused_support = false;   // queries fall back to support members
};

// Stratified N-way K-shot sample from S'; per-class queries come from the
// remaining members (up to the per-class quota), reusing support members
// only when a class has exactly `shot` members.
InnerEpisode sample_inner_episode(const ExpandedSupportSet& sprime, int way, int shot,
                                  int m_prime, RngStream& rng);

struct InnerConfig {
  int alpha = 4;
  double lambda = 0.1;
  double lr = 0.001;
  double momentum = 0.9;
  int way = 5;
  int shot = 1;
  int m_prime = 0;  // 0 = min(available per class, 5) * way
  std::string head = "proto";
  bool squared_dist = true;
  int rot_hidden = 256;
};

// Thrown when an inner or outer loss goes non-finite; the trainer skips
// the episode and continues.
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdaptResult {
  ParamState encoder_params;               // theta'
  std::optional<ParamState> relation_params;
  std::vector<double> loss_trace;          // total inner loss per step
};

// Computes Loss_TD + lambda * Loss_rot for one inner episode, without
// stepping. Gradients optional (zeros_like states).
ObjectiveResult inner_loss(Encoder& enc, const std::string& head, RelationModule* rel,
                           const RotationHead& rot, double lambda, bool squared_dist,
                           const ExpandedSupportSet& sprime, const InnerEpisode& episode,
                           ParamState* enc_grads = nullptr, ParamState* rel_grads = nullptr,
                           ParamState* rot_grads = nullptr);

// Runs alpha SGD steps of inner tasks on a clone of the outer parameters.
// The outer parameters are never touched; the rotation head is fresh per
// call.
AdaptResult adapt(const Encoder& outer_enc, const RelationModule* outer_rel,
                  const ExpandedSupportSet& sprime, const InnerConfig& cfg, RngStream& rng);

}  // namespace st
