#pragma once

#include <string>
#include <vector>

#include "st/backbone.hpp"

namespace st {

struct PrototypeSet {
  std::vector<std::vector<double>> protos;  // way x dim
  int way() const { return int(protos.size()); }
};

struct ClassScores {
  std::vector<double> p;  // sums to 1
  int argmax() const;
};

// Per-class arithmetic mean of embeddings. Labels are episode-local in
// [0, way); every class must be represented.
PrototypeSet prototypes(const std::vector<Embedding>& embeddings, const std::vector<int>& labels,
                        int way);

// Softmax over negative (squared) Euclidean distances.
ClassScores classify(const Embedding& query, const PrototypeSet& protos, bool squared = true);

struct FewshotGrads {
  std::vector<std::vector<double>> dquery;  // per query
  std::vector<std::vector<double>> dproto;  // per class
};

// Mean over queries of -log p(label). Equals the logsumexp+distance form.
// Optional gradients w.r.t. query embeddings and prototypes.
double fewshot_nll(const std::vector<Embedding>& queries, const std::vector<int>& labels,
                   const PrototypeSet& protos, bool squared = true,
                   FewshotGrads* grads = nullptr);

// Distributes prototype gradients back onto the support embeddings that
// produced them (1/count per member).
std::vector<std::vector<double>> proto_grads_to_support(
    const std::vector<std::vector<double>>& dproto, const std::vector<int>& support_labels,
    int way, int dim);

// Two-layer rotation-prediction head E: dim -> hidden -> 4.
class RotationHead {
 public:
  RotationHead(int in_dim, int hidden, uint64_t seed);
  ParamState& params() { return params_; }
  const ParamState& params() const { return params_; }
  int in_dim() const { return in_dim_; }

  std::vector<double> logits(const std::vector<double>& emb) const;

  // Mean cross-entropy over the batch. Accumulates parameter gradients
  // into gparams (zeros_like of params()) and writes per-sample
  // embedding gradients when requested.
  double loss(const std::vector<Embedding>& embeddings, const std::vector<int>& rotation_labels,
              ParamState* gparams = nullptr,
              std::vector<std::vector<double>>* dembeddings = nullptr) const;

 private:
  int in_dim_, hidden_;
  ParamState params_;
};

// Matching-style head: cosine attention over support embeddings,
// aggregated per class.
ClassScores matching_scores(const Embedding& query, const std::vector<Embedding>& support,
                            const std::vector<int>& support_labels, int way);

struct MatchingGrads {
  std::vector<double> dquery;
  std::vector<std::vector<double>> dsupport;
};

// -log score(label) for one query, with gradients.
double matching_nll(const Embedding& query, int label, const std::vector<Embedding>& support,
                    const std::vector<int>& support_labels, int way,
                    MatchingGrads* grads = nullptr);

// Relation head: one conv block over the channel-concatenated (query,
// class-mean-support) maps, GAP, linear score per class, softmax.
class RelationModule {
 public:
  RelationModule(int feat_channels, int relation_channels, uint64_t seed);
  ParamState& params() { return params_; }
  const ParamState& params() const { return params_; }

  ClassScores scores(const FeatureMap& query, const std::vector<FeatureMap>& class_maps) const;

  struct Grads {
    FeatureMap dquery;
    std::vector<FeatureMap> dclass_maps;
  };
  double nll(const FeatureMap& query, int label, const std::vector<FeatureMap>& class_maps,
             ParamState* gparams = nullptr, Grads* grads = nullptr) const;

 private:
  int feat_c_, rel_c_;
  ParamState params_;
  std::vector<double> forward_logits(const FeatureMap& query,
                                     const std::vector<FeatureMap>& class_maps,
                                     std::vector<FeatureMap>* concat,
                                     std::vector<FeatureMap>* relu) const;
};

// Per-class mean of support feature maps.
std::vector<FeatureMap> mean_maps(const std::vector<FeatureMap>& maps,
                                  const std::vector<int>& labels, int way);

}  // namespace st
