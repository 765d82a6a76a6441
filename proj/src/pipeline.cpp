#include "st/pipeline.hpp"

namespace st {

ExpandedSupportSet expand_support(Model& model, const std::vector<LabeledImage>& support,
                                  const TrainConfig& cfg, RngStream& rng,
                                  std::vector<FgBgPair>* out_pairs,
                                  std::vector<ObjectBox>* out_boxes) {
  ExpandConfig ec;
  ec.wsol_rot = cfg.wsol_rot && !cfg.whole_rot;
  ec.wsol_exc_rot = cfg.wsol_exc_rot && !cfg.whole_rot;
  ec.whole_rot = cfg.whole_rot;
  ec.g_self = cfg.g_self;
  ec.g_exch = cfg.g_exch;
  ec.p_rc = cfg.p_rc;

  std::vector<FgBgPair> pairs;
  std::vector<ObjectBox> boxes;
  if (ec.wsol_rot || ec.wsol_exc_rot) {
    std::vector<std::vector<double>> class_weights;
    if (cfg.cam_weighted) {
      // prototype of each class drives its members' CAM channel weights
      std::vector<Embedding> embs(support.size());
      std::vector<int> labels(support.size());
      int way = 0;
      for (size_t i = 0; i < support.size(); ++i) {
        embs[i] = pool(model.encoder.encode_map(support[i]));
        labels[i] = support[i].class_id;
        way = std::max(way, labels[i] + 1);
      }
      class_weights = prototypes(embs, labels, way).protos;
    }
    pairs.reserve(support.size());
    boxes.reserve(support.size());
    for (const LabeledImage& im : support) {
      const std::vector<double>* w =
          cfg.cam_weighted ? &class_weights[size_t(im.class_id)] : nullptr;
      ObjectBox box;
      pairs.push_back(locate_and_split(model.encoder, im, cfg.tau, w, &box));
      boxes.push_back(box);
    }
  }
  ExpandedSupportSet sprime = build_expanded_set(support, pairs, ec, rng);
  if (out_pairs) *out_pairs = std::move(pairs);
  if (out_boxes) *out_boxes = std::move(boxes);
  return sprime;
}

InnerConfig inner_config_from(const TrainConfig& cfg, int alpha) {
  InnerConfig ic;
  ic.alpha = alpha;
  ic.lambda = cfg.lambda;
  ic.lr = cfg.inner_lr;
  ic.momentum = cfg.inner_momentum;
  ic.way = cfg.way;
  ic.shot = cfg.shot;
  ic.m_prime = cfg.m_prime;
  ic.head = cfg.head;
  ic.squared_dist = cfg.squared_distance;
  ic.rot_hidden = cfg.rot_hidden;
  return ic;
}

std::vector<double> adapt_in_place(Model& model, const ExpandedSupportSet& sprime,
                                   const TrainConfig& cfg, int alpha, RngStream& rng) {
  if (alpha <= 0) return {};
  InnerConfig ic = inner_config_from(cfg, alpha);
  AdaptResult r = adapt(model.encoder, model.relation ? &*model.relation : nullptr, sprime, ic,
                        rng);
  load_params(model.encoder.params(), r.encoder_params);
  if (model.relation && r.relation_params)
    load_params(model.relation->params(), *r.relation_params);
  return r.loss_trace;
}

}  // namespace st
