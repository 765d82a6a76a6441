#include "st/objective.hpp"

#include <stdexcept>

namespace st {

ObjectiveResult episode_objective(Encoder& enc, const std::string& head, RelationModule* rel,
                                  const RotationHead* rot, double lambda, const TaskBatch& batch,
                                  bool squared_dist, bool update_stats, ParamState* enc_grads,
                                  ParamState* rel_grads, ParamState* rot_grads) {
  const bool backprop = enc_grads != nullptr;
  const size_t ns = batch.support.size();
  const size_t nq = batch.query.size();
  if (ns == 0 || nq == 0) throw std::invalid_argument("episode_objective: empty batch");

  std::vector<Encoder::Cache> s_cache(backprop ? ns : 0), q_cache(backprop ? nq : 0);
  std::vector<FeatureMap> s_maps(ns), q_maps(nq);
  std::vector<Embedding> s_embs(ns), q_embs(nq);
  for (size_t i = 0; i < ns; ++i) {
    s_maps[i] = enc.encode_map(*batch.support[i], backprop ? &s_cache[i] : nullptr, update_stats);
    s_embs[i] = pool(s_maps[i]);
  }
  for (size_t i = 0; i < nq; ++i) {
    q_maps[i] = enc.encode_map(*batch.query[i], backprop ? &q_cache[i] : nullptr, update_stats);
    q_embs[i] = pool(q_maps[i]);
  }

  int dim = enc.feature_dim();
  ObjectiveResult res;
  std::vector<std::vector<double>> ds_emb(ns, std::vector<double>(size_t(dim), 0.0));
  std::vector<std::vector<double>> dq_emb(nq, std::vector<double>(size_t(dim), 0.0));
  std::vector<FeatureMap> ds_map_extra;  // relation head writes map grads directly
  std::vector<FeatureMap> dq_map_extra;

  if (head == "proto") {
    PrototypeSet protos = prototypes(s_embs, batch.support_labels, batch.way);
    FewshotGrads fg;
    res.loss_fs = fewshot_nll(q_embs, batch.query_labels, protos, squared_dist,
                              backprop ? &fg : nullptr);
    int correct = 0;
    for (size_t i = 0; i < nq; ++i)
      if (classify(q_embs[i], protos, squared_dist).argmax() == batch.query_labels[i]) ++correct;
    res.accuracy = double(correct) / double(nq);
    if (backprop) {
      dq_emb = std::move(fg.dquery);
      ds_emb = proto_grads_to_support(fg.dproto, batch.support_labels, batch.way, dim);
    }
  } else if (head == "matching") {
    double loss = 0;
    int correct = 0;
    for (size_t i = 0; i < nq; ++i) {
      MatchingGrads mg;
      loss += matching_nll(q_embs[i], batch.query_labels[i], s_embs, batch.support_labels,
                           batch.way, backprop ? &mg : nullptr);
      if (matching_scores(q_embs[i], s_embs, batch.support_labels, batch.way).argmax() ==
          batch.query_labels[i])
        ++correct;
      if (backprop) {
        double inv = 1.0 / double(nq);
        for (int d = 0; d < dim; ++d) dq_emb[i][size_t(d)] += mg.dquery[size_t(d)] * inv;
        for (size_t j = 0; j < ns; ++j)
          for (int d = 0; d < dim; ++d) ds_emb[j][size_t(d)] += mg.dsupport[j][size_t(d)] * inv;
      }
    }
    res.loss_fs = loss / double(nq);
    res.accuracy = double(correct) / double(nq);
  } else if (head == "relation") {
    if (!rel) throw std::invalid_argument("relation head selected but no relation module");
    std::vector<FeatureMap> class_maps = mean_maps(s_maps, batch.support_labels, batch.way);
    std::vector<int> counts(size_t(batch.way), 0);
    for (int y : batch.support_labels) ++counts[size_t(y)];
    if (backprop) {
      ds_map_extra.resize(ns);
      dq_map_extra.resize(nq);
    }
    double loss = 0;
    int correct = 0;
    std::vector<FeatureMap> dclass_sum;
    for (size_t i = 0; i < nq; ++i) {
      RelationModule::Grads rg;
      loss += rel->nll(q_maps[i], batch.query_labels[i], class_maps,
                       backprop ? rel_grads : nullptr, backprop ? &rg : nullptr);
      if (rel->scores(q_maps[i], class_maps).argmax() == batch.query_labels[i]) ++correct;
      if (backprop) {
        double inv = 1.0 / double(nq);
        FeatureMap& dq = dq_map_extra[i];
        dq = std::move(rg.dquery);
        for (auto& v : dq.v) v *= inv;
        if (dclass_sum.empty()) dclass_sum = std::move(rg.dclass_maps);
        else
          for (size_t k = 0; k < dclass_sum.size(); ++k)
            for (size_t t = 0; t < dclass_sum[k].v.size(); ++t)
              dclass_sum[k].v[t] += rg.dclass_maps[k].v[t];
      }
    }
    res.loss_fs = loss / double(nq);
    res.accuracy = double(correct) / double(nq);
    if (backprop) {
      if (rel_grads) {
        // rel->nll accumulated unscaled per-query grads; rescale by 1/nq
        // is folded in here by scaling the whole gradient state once.
        for (auto& e : rel_grads->entries())
          for (long t = 0; t < e.value.numel(); ++t) e.value[size_t(t)] /= double(nq);
      }
      for (size_t j = 0; j < ns; ++j) {
        int k = batch.support_labels[j];
        FeatureMap& dm = ds_map_extra[j];
        dm.channels = s_maps[j].channels;
        dm.h = s_maps[j].h;
        dm.w = s_maps[j].w;
        dm.v.assign(s_maps[j].v.size(), 0.0);
        double inv = 1.0 / (double(nq) * counts[size_t(k)]);
        for (size_t t = 0; t < dm.v.size(); ++t) dm.v[t] = dclass_sum[size_t(k)].v[t] * inv;
      }
    }
  } else {
    throw std::invalid_argument("unknown head '" + head + "' (proto | matching | relation)");
  }

  if (rot && !batch.support_rotation_labels.empty()) {
    std::vector<std::vector<double>> drot_emb;
    res.loss_rot = rot->loss(s_embs, batch.support_rotation_labels, rot_grads,
                             backprop ? &drot_emb : nullptr);
    if (backprop) {
      if (rot_grads)
        for (auto& e : rot_grads->entries())
          for (long t = 0; t < e.value.numel(); ++t) e.value[size_t(t)] *= lambda;
      for (size_t j = 0; j < ns; ++j)
        for (int d = 0; d < dim; ++d) ds_emb[j][size_t(d)] += lambda * drot_emb[j][size_t(d)];
    }
  }
  res.loss_total = res.loss_fs + lambda * res.loss_rot;

  if (backprop) {
    for (size_t j = 0; j < ns; ++j) {
      FeatureMap dmap = pool_backward(ds_emb[j], s_maps[j]);
      if (!ds_map_extra.empty() && !ds_map_extra[j].v.empty())
        for (size_t t = 0; t < dmap.v.size(); ++t) dmap.v[t] += ds_map_extra[j].v[t];
      enc.backward(s_cache[j], dmap, *enc_grads);
    }
    for (size_t i = 0; i < nq; ++i) {
      FeatureMap dmap = pool_backward(dq_emb[i], q_maps[i]);
      if (!dq_map_extra.empty() && !dq_map_extra[i].v.empty())
        for (size_t t = 0; t < dmap.v.size(); ++t) dmap.v[t] += dq_map_extra[i].v[t];
      enc.backward(q_cache[i], dmap, *enc_grads);
    }
  }
  return res;
}

}  // namespace st
