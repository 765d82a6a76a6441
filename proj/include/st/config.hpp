#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "st/data.hpp"

namespace st {

struct TrainConfig {
  // episode shape
  int way = 5;
  int shot = 1;
  int queries_per_class = 15;

  // inner task
  int alpha = 4;             // 4 for 1-shot, 6 for 5-shot
  double lambda = 0.1;
  double inner_lr = 0.001;
  double inner_momentum = 0.9;
  int m_prime = 0;           // 0 = auto
  int rot_hidden = 256;

  // outer task
  double outer_lr = 1e-4;
  int episodes = 1000;
  uint64_t seed = 0;
  std::string head = "proto";  // proto | matching | relation

  // ablation toggles
  bool wsol_rot = true;
  bool wsol_exc_rot = true;
  bool whole_rot = false;
  bool td_enabled = true;

  // expansion
  int g_self = 1;
  int g_exch = 3;
  double tau = 0.2;
  double p_rc = 0.5;
  bool cam_weighted = false;
  // Encoder block whose activations feed the localization heatmap
  // (-1 = final block). Early blocks keep an edge-energy response that
  // stays object-aligned through training; the final block's channel
  // mean flattens out once the embedding specializes.
  int cam_block = 0;
  bool squared_distance = true;

  // backbone
  int image_side = 84;
  int encoder_width = 64;
  int encoder_blocks = 4;
  std::string encoder_tier = "conv4";

  // bookkeeping
  int val_every = 50;
  int val_episodes = 30;
  DomainSpec source{"source", "synth:A:0", "train", 16, 40};
  std::string out_dir = "runs/default";
  std::string init_checkpoint;

  // evaluation
  int eval_episodes = 600;
  int eval_alpha = -1;  // -1 = same alpha as training
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config_file(const std::string& path);

// Short hash of the canonical config JSON, for report provenance.
std::string config_fingerprint(const TrainConfig& cfg);

// Resolves a dataset root: synthetic roots pass through; relative
// directory roots are prefixed by $ST_DATA_ROOT when set.
std::string resolve_data_root(const std::string& root);

}  // namespace st
