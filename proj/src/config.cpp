#include "st/config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace st {

using nlohmann::json;

json config_to_json(const TrainConfig& c) {
  json j;
  j["way"] = c.way;
  j["shot"] = c.shot;
  j["queries_per_class"] = c.queries_per_class;
  j["alpha"] = c.alpha;
  j["lambda"] = c.lambda;
  j["inner_lr"] = c.inner_lr;
  j["inner_momentum"] = c.inner_momentum;
  j["m_prime"] = c.m_prime;
  j["rot_hidden"] = c.rot_hidden;
  j["outer_lr"] = c.outer_lr;
  j["episodes"] = c.episodes;
  j["seed"] = c.seed;
  j["head"] = c.head;
  j["wsol_rot"] = c.wsol_rot;
  j["wsol_exc_rot"] = c.wsol_exc_rot;
  j["whole_rot"] = c.whole_rot;
  j["td_enabled"] = c.td_enabled;
  j["g_self"] = c.g_self;
  j["g_exch"] = c.g_exch;
  j["tau"] = c.tau;
  j["p_rc"] = c.p_rc;
  j["cam_weighted"] = c.cam_weighted;
  j["cam_block"] = c.cam_block;
  j["squared_distance"] = c.squared_distance;
  j["image_side"] = c.image_side;
  j["encoder_width"] = c.encoder_width;
  j["encoder_blocks"] = c.encoder_blocks;
  j["encoder_tier"] = c.encoder_tier;
  j["val_every"] = c.val_every;
  j["val_episodes"] = c.val_episodes;
  j["source"] = {{"name", c.source.name},
                 {"root", c.source.root},
                 {"split", c.source.split},
                 {"n_classes", c.source.n_classes},
                 {"images_per_class", c.source.images_per_class}};
  j["out_dir"] = c.out_dir;
  j["init_checkpoint"] = c.init_checkpoint;
  j["eval_episodes"] = c.eval_episodes;
  j["eval_alpha"] = c.eval_alpha;
  return j;
}

static DomainSpec domain_from_json(const json& j, const DomainSpec& base) {
  DomainSpec d = base;
  for (auto& [k, v] : j.items()) {
    if (k == "name") d.name = v.get<std::string>();
    else if (k == "root") d.root = v.get<std::string>();
    else if (k == "split") d.split = v.get<std::string>();
    else if (k == "n_classes") d.n_classes = v.get<int>();
    else if (k == "images_per_class") d.images_per_class = v.get<int>();
    else throw std::runtime_error("config: unknown domain key '" + k + "'");
  }
  return d;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  for (auto& [k, v] : j.items()) {
    if (k == "way") c.way = v.get<int>();
    else if (k == "shot") c.shot = v.get<int>();
    else if (k == "queries_per_class") c.queries_per_class = v.get<int>();
    else if (k == "alpha") c.alpha = v.get<int>();
    else if (k == "lambda") c.lambda = v.get<double>();
    else if (k == "inner_lr") c.inner_lr = v.get<double>();
    else if (k == "inner_momentum") c.inner_momentum = v.get<double>();
    else if (k == "m_prime") c.m_prime = v.get<int>();
    else if (k == "rot_hidden") c.rot_hidden = v.get<int>();
    else if (k == "outer_lr") c.outer_lr = v.get<double>();
    else if (k == "episodes") c.episodes = v.get<int>();
    else if (k == "seed") c.seed = v.get<uint64_t>();
    else if (k == "head") c.head = v.get<std::string>();
    else if (k == "wsol_rot") c.wsol_rot = v.get<bool>();
    else if (k == "wsol_exc_rot") c.wsol_exc_rot = v.get<bool>();
    else if (k == "whole_rot") c.whole_rot = v.get<bool>();
    else if (k == "td_enabled") c.td_enabled = v.get<bool>();
    else if (k == "g_self") c.g_self = v.get<int>();
    else if (k == "g_exch") c.g_exch = v.get<int>();
    else if (k == "tau") c.tau = v.get<double>();
    else if (k == "p_rc") c.p_rc = v.get<double>();
    else if (k == "cam_weighted") c.cam_weighted = v.get<bool>();
    else if (k == "cam_block") c.cam_block = v.get<int>();
    else if (k == "squared_distance") c.squared_distance = v.get<bool>();
    else if (k == "image_side") c.image_side = v.get<int>();
    else if (k == "encoder_width") c.encoder_width = v.get<int>();
    else if (k == "encoder_blocks") c.encoder_blocks = v.get<int>();
    else if (k == "encoder_tier") c.encoder_tier = v.get<std::string>();
    else if (k == "val_every") c.val_every = v.get<int>();
    else if (k == "val_episodes") c.val_episodes = v.get<int>();
    else if (k == "source") c.source = domain_from_json(v, c.source);
    else if (k == "out_dir") c.out_dir = v.get<std::string>();
    else if (k == "init_checkpoint") c.init_checkpoint = v.get<std::string>();
    else if (k == "eval_episodes") c.eval_episodes = v.get<int>();
    else if (k == "eval_alpha") c.eval_alpha = v.get<int>();
    else throw std::runtime_error("config: unknown key '" + k + "'");
  }
  return c;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return config_from_json(j);
}

std::string config_fingerprint(const TrainConfig& cfg) {
  std::string s = config_to_json(cfg).dump();
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

std::string resolve_data_root(const std::string& root) {
  if (root.rfind("synth:", 0) == 0) return root;
  if (!root.empty() && root[0] == '/') return root;
  const char* base = std::getenv("ST_DATA_ROOT");
  if (base && *base) return std::string(base) + "/" + root;
  return root;
}

}  // namespace st
