#include "st/inner.hpp"

#include <cmath>
#include <stdexcept>

#include "st/optim.hpp"

namespace st {

InnerEpisode sample_inner_episode(const ExpandedSupportSet& sprime, int way, int shot,
                                  int m_prime, RngStream& rng) {
  int n_classes = int(sprime.by_class.size());
  if (n_classes < way)
    throw std::runtime_error("sample_inner_episode: S' has " + std::to_string(n_classes) +
                             " classes, need " + std::to_string(way));
  std::vector<int> class_order(static_cast<size_t>(n_classes));
  for (int i = 0; i < n_classes; ++i) class_order[size_t(i)] = i;
  rng.shuffle(class_order);

  int per_class_quota = m_prime > 0 ? std::max(1, m_prime / way) : 5;
  InnerEpisode ep;
  for (int c = 0; c < way; ++c) {
    const std::vector<int>& members = sprime.by_class[size_t(class_order[size_t(c)])];
    if (int(members.size()) < shot)
      throw std::runtime_error("sample_inner_episode: class " +
                               std::to_string(class_order[size_t(c)]) + " has " +
                               std::to_string(members.size()) + " members, need " +
                               std::to_string(shot));
    std::vector<int> order = members;
    rng.shuffle(order);
    for (int i = 0; i < shot; ++i) ep.support_idx.push_back(order[size_t(i)]);
    int avail = int(order.size()) - shot;
    if (avail == 0) {
      // reuse the support members as queries
      ep.reused_support = true;
      for (int i = 0; i < shot; ++i) ep.query_idx.push_back(order[size_t(i)]);
    } else {
      int take = std::min(avail, per_class_quota);
      for (int i = 0; i < take; ++i) ep.query_idx.push_back(order[size_t(shot + i)]);
    }
  }
  return ep;
}

namespace {

TaskBatch make_batch(const ExpandedSupportSet& sprime, const InnerEpisode& episode, int way) {
  // inner episodes use compact local labels over the sampled classes
  std::vector<int> remap;
  auto local_label = [&](int class_id) {
    for (size_t i = 0; i < remap.size(); ++i)
      if (remap[i] == class_id) return int(i);
    remap.push_back(class_id);
    return int(remap.size()) - 1;
  };
  TaskBatch batch;
  batch.way = way;
  for (int idx : episode.support_idx) {
    const ExpandedSample& s = sprime.samples[size_t(idx)];
    batch.support.push_back(&s.image);
    batch.support_labels.push_back(local_label(s.image.class_id));
    batch.support_rotation_labels.push_back(s.rotation_label);
  }
  for (int idx : episode.query_idx) {
    const ExpandedSample& s = sprime.samples[size_t(idx)];
    batch.query.push_back(&s.image);
    batch.query_labels.push_back(local_label(s.image.class_id));
  }
  return batch;
}

}  // namespace

ObjectiveResult inner_loss(Encoder& enc, const std::string& head, RelationModule* rel,
                           const RotationHead& rot, double lambda, bool squared_dist,
                           const ExpandedSupportSet& sprime, const InnerEpisode& episode,
                           ParamState* enc_grads, ParamState* rel_grads, ParamState* rot_grads) {
  TaskBatch batch = make_batch(sprime, episode, 0);
  // way = number of distinct classes actually sampled
  int way = 0;
  for (int l : batch.support_labels) way = std::max(way, l + 1);
  batch.way = way;
  return episode_objective(enc, head, rel, &rot, lambda, batch, squared_dist,
                           /*update_stats=*/false, enc_grads, rel_grads, rot_grads);
}

AdaptResult adapt(const Encoder& outer_enc, const RelationModule* outer_rel,
                  const ExpandedSupportSet& sprime, const InnerConfig& cfg, RngStream& rng) {
  Encoder inner_enc(outer_enc.config(), clone_params(outer_enc.params()));
  std::optional<RelationModule> inner_rel;
  if (outer_rel) {
    inner_rel.emplace(*outer_rel);
  }
  RotationHead rot(inner_enc.feature_dim(), cfg.rot_hidden, rng.derive(101).next_u64());

  SgdMomentum enc_opt(cfg.lr, cfg.momentum);
  SgdMomentum rel_opt(cfg.lr, cfg.momentum);
  SgdMomentum rot_opt(cfg.lr, cfg.momentum);

  AdaptResult result;
  RngStream sample_rng = rng.derive(102);
  for (int t = 0; t < cfg.alpha; ++t) {
    InnerEpisode ep = sample_inner_episode(sprime, cfg.way, cfg.shot, cfg.m_prime, sample_rng);
    ParamState enc_grads = ParamState::zeros_like(inner_enc.params());
    ParamState rot_grads = ParamState::zeros_like(rot.params());
    ParamState rel_grads;
    if (inner_rel) rel_grads = ParamState::zeros_like(inner_rel->params());
    ObjectiveResult r = inner_loss(inner_enc, cfg.head, inner_rel ? &*inner_rel : nullptr, rot,
                                   cfg.lambda, cfg.squared_dist, sprime, ep, &enc_grads,
                                   inner_rel ? &rel_grads : nullptr, &rot_grads);
    if (!std::isfinite(r.loss_total))
      throw NonFiniteLoss("non-finite inner loss at step " + std::to_string(t));
    enc_opt.step(inner_enc.params(), enc_grads);
    if (inner_rel) rel_opt.step(inner_rel->params(), rel_grads);
    rot_opt.step(rot.params(), rot_grads);
    result.loss_trace.push_back(r.loss_total);
  }
  result.encoder_params = std::move(inner_enc.params());
  if (inner_rel) result.relation_params = std::move(inner_rel->params());
  return result;
}

}  // namespace st
