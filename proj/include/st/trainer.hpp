#pragma once

#include <optional>
#include <string>

#include "st/eval.hpp"
#include "st/model.hpp"
#include "st/optim.hpp"
#include "st/pipeline.hpp"

namespace st {

// Outer training loop: per episode, localize + expand the support set,
// run the inner adaptation (when enabled), then take one Adam step on
// the query loss. Episode RNG is derived statelessly from (seed,
// episode), so resuming from a checkpoint replays the exact stream.
class Trainer {
 public:
  // resume_counters: restore episode counter / optimizer moments from
  // cfg.init_checkpoint (otherwise only the weights are taken).
  explicit Trainer(TrainConfig cfg, bool resume_counters = true);

  struct EpisodeStats {
    int episode = 0;
    double loss_fs = 0;
    double accuracy = 0;
    double inner_final_loss = 0;  // 0 when no inner steps ran
    int sprime_size = 0;
    bool skipped = false;  // non-finite loss; no parameter update
  };

  EpisodeStats train_episode(int episode_index);

  // Full loop with metrics JSONL, periodic validation, best/last
  // checkpoints under cfg.out_dir.
  void train();

  void save(const std::string& path) const;

  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int next_episode() const { return next_episode_; }
  double best_val() const { return best_val_; }
  const Collection& train_collection() const { return train_coll_; }
  const std::optional<Collection>& val_collection() const { return val_coll_; }

 private:
  TrainConfig cfg_;
  Model model_;
  Adam adam_;
  Collection train_coll_;
  std::optional<Collection> val_coll_;
  int next_episode_ = 0;
  double best_val_ = -1;

  void load_from(const std::string& path, bool resume_counters);
};

// Loads a collection for the spec's split, resolving $ST_DATA_ROOT for
// relative directory roots.
Collection load_split(const DomainSpec& spec, const std::string& split, const TrainConfig& cfg);

// Reads the config stored in a checkpoint manifest.
TrainConfig checkpoint_config(const std::string& path);

// Builds a model directly from a checkpoint (weights only).
Model load_model(const std::string& path, TrainConfig* out_cfg = nullptr);

}  // namespace st
