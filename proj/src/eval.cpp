#include "st/eval.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "st/objective.hpp"

namespace st {

using nlohmann::json;

json report_to_json(const EvalReport& r) {
  return json{{"domain", r.domain},
              {"mean_accuracy", r.mean_accuracy},
              {"ci95", r.ci95},
              {"episodes", r.episodes},
              {"per_episode", r.per_episode},
              {"config_fingerprint", r.config_fingerprint}};
}

namespace {

void dump_embeddings(std::ofstream& out, Encoder& enc, const std::vector<LabeledImage>& images,
                     const char* kind, int episode) {
  for (const LabeledImage& im : images) {
    Embedding e = pool(enc.encode_map(im));
    json j{{"episode", episode}, {"kind", kind}, {"label", im.class_id}, {"embedding", e.v}};
    out << j.dump() << "\n";
  }
}

}  // namespace

EvalReport evaluate(const Model& base, const Collection& target, const TrainConfig& cfg,
                    int episodes, uint64_t seed, int alpha, const std::string& dump_path,
                    const std::string& domain_name) {
  if (alpha < 0) alpha = cfg.eval_alpha >= 0 ? cfg.eval_alpha : cfg.alpha;
  std::ofstream dump;
  if (!dump_path.empty()) {
    dump.open(dump_path);
    if (!dump) throw std::runtime_error("cannot open embedding dump: " + dump_path);
  }

  EvalReport rep;
  rep.domain = domain_name;
  rep.episodes = episodes;
  rep.config_fingerprint = config_fingerprint(cfg);
  for (int ep = 0; ep < episodes; ++ep) {
    RngStream ep_rng = derived_stream(seed, uint64_t(ep), 3);
    Episode episode = sample_episode(target, cfg.way, cfg.shot, cfg.queries_per_class, ep_rng);

    Model m = base;
    if (cfg.td_enabled && alpha > 0) {
      RngStream ex_rng = derived_stream(seed, uint64_t(ep), 4);
      RngStream ad_rng = derived_stream(seed, uint64_t(ep), 5);
      ExpandedSupportSet sprime = expand_support(m, episode.support, cfg, ex_rng);
      try {
        adapt_in_place(m, sprime, cfg, alpha, ad_rng);
      } catch (const NonFiniteLoss& e) {
        std::cerr << "eval episode " << ep << ": " << e.what() << "; scoring unadapted\n";
        m = base;
      }
    }

    TaskBatch batch;
    batch.way = cfg.way;
    for (const LabeledImage& im : episode.support) {
      batch.support.push_back(&im);
      batch.support_labels.push_back(im.class_id);
    }
    for (const LabeledImage& im : episode.query) {
      batch.query.push_back(&im);
      batch.query_labels.push_back(im.class_id);
    }
    ObjectiveResult r =
        episode_objective(m.encoder, m.head, m.relation ? &*m.relation : nullptr, nullptr, 0.0,
                          batch, cfg.squared_distance, /*update_stats=*/false, nullptr, nullptr,
                          nullptr);
    rep.per_episode.push_back(r.accuracy);

    if (dump.is_open()) {
      dump_embeddings(dump, m.encoder, episode.support, "support", ep);
      dump_embeddings(dump, m.encoder, episode.query, "query", ep);
    }
  }

  double sum = 0;
  for (double a : rep.per_episode) sum += a;
  rep.mean_accuracy = rep.per_episode.empty() ? 0 : sum / rep.per_episode.size();
  if (rep.per_episode.size() > 1) {
    double ss = 0;
    for (double a : rep.per_episode) ss += (a - rep.mean_accuracy) * (a - rep.mean_accuracy);
    double sd = std::sqrt(ss / (rep.per_episode.size() - 1));
    rep.ci95 = 1.96 * sd / std::sqrt(double(rep.per_episode.size()));
  }
  return rep;
}

std::vector<AlphaPoint> sweep_alpha(const Model& base, const Collection& target,
                                    const TrainConfig& cfg, const std::vector<int>& alphas,
                                    int episodes, uint64_t seed) {
  std::vector<AlphaPoint> points;
  for (int a : alphas) {
    AlphaPoint p;
    p.alpha = a;
    p.report = evaluate(base, target, cfg, episodes, seed, a);
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace st
