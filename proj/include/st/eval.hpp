#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "st/model.hpp"
#include "st/pipeline.hpp"

namespace st {

struct EvalReport {
  std::string domain;
  double mean_accuracy = 0;      // fraction in [0,1]
  double ci95 = 0;               // 1.96 * stdev / sqrt(episodes)
  int episodes = 0;
  std::vector<double> per_episode;
  std::string config_fingerprint;
};

nlohmann::json report_to_json(const EvalReport& r);

// Episodic evaluation on a target collection. With task decomposition
// enabled each episode localizes + expands its support and adapts a
// fresh parameter clone (alpha steps) before scoring the queries; the
// base model is never modified. alpha < 0 uses cfg.alpha.
// dump_path, when non-empty, receives one JSON line per support/query
// embedding.
EvalReport evaluate(const Model& base, const Collection& target, const TrainConfig& cfg,
                    int episodes, uint64_t seed, int alpha = -1,
                    const std::string& dump_path = "", const std::string& domain_name = "");

struct AlphaPoint {
  int alpha = 0;
  EvalReport report;
};

std::vector<AlphaPoint> sweep_alpha(const Model& base, const Collection& target,
                                    const TrainConfig& cfg, const std::vector<int>& alphas,
                                    int episodes, uint64_t seed);

}  // namespace st
