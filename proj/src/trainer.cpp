#include "st/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "st/checkpoint.hpp"
#include "st/objective.hpp"

namespace st {

namespace fs = std::filesystem;
using nlohmann::json;

Collection load_split(const DomainSpec& spec, const std::string& split, const TrainConfig& cfg) {
  DomainSpec s = spec;
  s.root = resolve_data_root(s.root);
  s.split = split;
  return load_domain(s, cfg.image_side, cfg.shot + cfg.queries_per_class);
}

TrainConfig checkpoint_config(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  json man = json::parse(ck.manifest_json);
  if (!man.contains("config"))
    throw std::runtime_error("checkpoint has no config in its manifest: " + path);
  return config_from_json(man["config"]);
}

namespace {

void split_checkpoint_tensors(const ParamState& tensors, ParamState& model_part,
                              ParamState& adam_part) {
  for (const ParamEntry& e : tensors.entries()) {
    if (e.name.rfind("adam.", 0) == 0)
      adam_part.add(e.name.substr(5), e.value, e.trainable);
    else
      model_part.add(e.name, e.value, e.trainable);
  }
}

}  // namespace

Model load_model(const std::string& path, TrainConfig* out_cfg) {
  Checkpoint ck = load_checkpoint(path);
  json man = json::parse(ck.manifest_json);
  if (!man.contains("config"))
    throw std::runtime_error("checkpoint has no config in its manifest: " + path);
  TrainConfig cfg = config_from_json(man["config"]);
  Model m = Model::create(cfg);
  ParamState model_part, adam_part;
  split_checkpoint_tensors(ck.tensors, model_part, adam_part);
  m.load_snapshot(model_part);
  if (out_cfg) *out_cfg = cfg;
  return m;
}

Trainer::Trainer(TrainConfig cfg, bool resume_counters)
    : cfg_(std::move(cfg)),
      model_(Model::create(cfg_)),
      adam_(cfg_.outer_lr),
      train_coll_(load_split(cfg_.source, cfg_.source.split, cfg_)) {
  // Validation needs a class-disjoint split; directory roots carry no
  // split structure, so only synthetic sources validate.
  if (cfg_.source.root.rfind("synth:", 0) == 0 && cfg_.val_every > 0 && cfg_.val_episodes > 0) {
    Collection v = load_split(cfg_.source, "val", cfg_);
    if (int(v.classes.size()) >= cfg_.way) val_coll_ = std::move(v);
    else
      std::cerr << "validation split has " << v.classes.size() << " classes, need " << cfg_.way
                << "; validation disabled\n";
  }
  if (!cfg_.init_checkpoint.empty()) load_from(cfg_.init_checkpoint, resume_counters);
}

void Trainer::load_from(const std::string& path, bool resume_counters) {
  Checkpoint ck = load_checkpoint(path);
  ParamState model_part, adam_part;
  split_checkpoint_tensors(ck.tensors, model_part, adam_part);
  model_.load_snapshot(model_part);
  if (!resume_counters) return;
  json man = json::parse(ck.manifest_json);
  if (man.contains("adam_t") && adam_part.size() > 0)
    adam_.import_state(adam_part, man["adam_t"].get<long>());
  next_episode_ = man.value("next_episode", 0);
  best_val_ = man.value("best_val", -1.0);
}

void Trainer::save(const std::string& path) const {
  Checkpoint ck;
  ck.tensors = model_.snapshot();
  ck.tensors.merge(adam_.export_state(), "adam.");
  json man;
  man["config"] = config_to_json(cfg_);
  man["config_fingerprint"] = config_fingerprint(cfg_);
  man["next_episode"] = next_episode_;
  man["best_val"] = best_val_;
  man["adam_t"] = adam_.t();
  ck.manifest_json = man.dump();
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  save_checkpoint(path, ck);
}

Trainer::EpisodeStats Trainer::train_episode(int episode_index) {
  EpisodeStats stats;
  stats.episode = episode_index;

  RngStream samp_rng = derived_stream(cfg_.seed, uint64_t(episode_index), 0);
  Episode episode =
      sample_episode(train_coll_, cfg_.way, cfg_.shot, cfg_.queries_per_class, samp_rng);

  const bool run_inner = cfg_.td_enabled && cfg_.alpha > 0;
  const bool need_sprime = run_inner || !cfg_.td_enabled;

  ExpandedSupportSet sprime;
  if (need_sprime) {
    RngStream ex_rng = derived_stream(cfg_.seed, uint64_t(episode_index), 1);
    sprime = expand_support(model_, episode.support, cfg_, ex_rng);
    stats.sprime_size = int(sprime.samples.size());
  }

  ParamState pre = model_.snapshot();
  if (run_inner) {
    RngStream ad_rng = derived_stream(cfg_.seed, uint64_t(episode_index), 2);
    try {
      std::vector<double> trace = adapt_in_place(model_, sprime, cfg_, cfg_.alpha, ad_rng);
      if (!trace.empty()) stats.inner_final_loss = trace.back();
    } catch (const NonFiniteLoss& e) {
      std::cerr << "episode " << episode_index << ": " << e.what() << "; skipping\n";
      stats.skipped = true;
      return stats;
    }
  }

  TaskBatch batch;
  batch.way = cfg_.way;
  if (cfg_.td_enabled) {
    // prototypes come from the original support set
    for (const LabeledImage& im : episode.support) {
      batch.support.push_back(&im);
      batch.support_labels.push_back(im.class_id);
    }
  } else {
    // without decomposition the expanded variants feed the outer task
    for (const ExpandedSample& s : sprime.samples) {
      batch.support.push_back(&s.image);
      batch.support_labels.push_back(s.image.class_id);
    }
  }
  for (const LabeledImage& im : episode.query) {
    batch.query.push_back(&im);
    batch.query_labels.push_back(im.class_id);
  }

  ParamState enc_grads = ParamState::zeros_like(model_.encoder.params());
  ParamState rel_grads;
  if (model_.relation) rel_grads = ParamState::zeros_like(model_.relation->params());
  ObjectiveResult r = episode_objective(
      model_.encoder, model_.head, model_.relation ? &*model_.relation : nullptr, nullptr, 0.0,
      batch, cfg_.squared_distance, /*update_stats=*/true, &enc_grads,
      model_.relation ? &rel_grads : nullptr, nullptr);
  stats.loss_fs = r.loss_fs;
  stats.accuracy = r.accuracy;
  if (!std::isfinite(r.loss_total)) {
    std::cerr << "episode " << episode_index << ": non-finite outer loss; skipping\n";
    model_.load_snapshot(pre);  // discard inner steps and running stats
    stats.skipped = true;
    return stats;
  }

  ParamState snap = model_.snapshot();
  ParamState grads;
  grads.merge(enc_grads, "enc.");
  if (model_.relation) grads.merge(rel_grads, "rel.");
  adam_.step(snap, grads);
  model_.load_snapshot(snap);
  return stats;
}

void Trainer::train() {
  fs::create_directories(cfg_.out_dir);
  std::string metrics_path = cfg_.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path,
                        next_episode_ > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path);

  for (int ep = next_episode_; ep < cfg_.episodes; ++ep) {
    EpisodeStats s = train_episode(ep);
    next_episode_ = ep + 1;
    json line{{"episode", s.episode},
              {"loss_fs", s.loss_fs},
              {"accuracy", s.accuracy},
              {"inner_final_loss", s.inner_final_loss},
              {"sprime_size", s.sprime_size},
              {"skipped", s.skipped}};
    metrics << line.dump() << "\n";
    metrics.flush();

    if (val_coll_ && cfg_.val_every > 0 && (ep + 1) % cfg_.val_every == 0) {
      EvalReport rep = evaluate(model_, *val_coll_, cfg_, cfg_.val_episodes,
                                mix_seed(cfg_.seed, 777001), cfg_.alpha);
      json vline{{"episode", s.episode},
                 {"val_accuracy", rep.mean_accuracy},
                 {"val_ci95", rep.ci95}};
      metrics << vline.dump() << "\n";
      metrics.flush();
      if (rep.mean_accuracy > best_val_) {
        best_val_ = rep.mean_accuracy;
        save(cfg_.out_dir + "/best.ckpt");
      }
      save(cfg_.out_dir + "/last.ckpt");
    }
  }
  save(cfg_.out_dir + "/last.ckpt");
  if (!val_coll_) save(cfg_.out_dir + "/best.ckpt");
}

}  // namespace st
