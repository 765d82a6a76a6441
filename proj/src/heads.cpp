#include "st/heads.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "st/detail/conv3.hpp"
#include "st/rng.hpp"

namespace st {

using detail::CMapRM;
using detail::MapRM;
using detail::MatRM;

namespace {

constexpr double kEps = 1e-12;

std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double distance(const std::vector<double>& a, const std::vector<double>& b, bool squared) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return squared ? s : std::sqrt(s);
}

}  // namespace

int ClassScores::argmax() const {
  int best = 0;
  for (size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[size_t(best)]) best = int(i);
  return best;
}

PrototypeSet prototypes(const std::vector<Embedding>& embeddings, const std::vector<int>& labels,
                        int way) {
  if (embeddings.empty() || embeddings.size() != labels.size())
    throw std::invalid_argument("prototypes: embeddings/labels size mismatch");
  size_t dim = embeddings[0].v.size();
  PrototypeSet set;
  set.protos.assign(size_t(way), std::vector<double>(dim, 0.0));
  std::vector<int> counts(size_t(way), 0);
  for (size_t i = 0; i < embeddings.size(); ++i) {
    int k = labels[i];
    if (k < 0 || k >= way) throw std::invalid_argument("prototypes: label out of range");
    for (size_t d = 0; d < dim; ++d) set.protos[size_t(k)][d] += embeddings[i].v[d];
    ++counts[size_t(k)];
  }
  for (int k = 0; k < way; ++k) {
    if (counts[size_t(k)] == 0)
      throw std::invalid_argument("prototypes: class " + std::to_string(k) + " has no embeddings");
    for (auto& v : set.protos[size_t(k)]) v /= counts[size_t(k)];
  }
  return set;
}

ClassScores classify(const Embedding& query, const PrototypeSet& protos, bool squared) {
  std::vector<double> logits(protos.protos.size());
  for (size_t k = 0; k < protos.protos.size(); ++k) {
    if (protos.protos[k].size() != query.v.size())
      throw std::invalid_argument("classify: dimension mismatch");
    logits[k] = -distance(query.v, protos.protos[k], squared);
  }
  return ClassScores{softmax(logits)};
}

double fewshot_nll(const std::vector<Embedding>& queries, const std::vector<int>& labels,
                   const PrototypeSet& protos, bool squared, FewshotGrads* grads) {
  size_t m = queries.size();
  size_t dim = protos.protos.empty() ? 0 : protos.protos[0].size();
  int way = protos.way();
  if (grads) {
    grads->dquery.assign(m, std::vector<double>(dim, 0.0));
    grads->dproto.assign(size_t(way), std::vector<double>(dim, 0.0));
  }
  double loss = 0;
  for (size_t i = 0; i < m; ++i) {
    int y = labels[i];
    if (y < 0 || y >= way) throw std::invalid_argument("fewshot_nll: label out of range");
    ClassScores scores = classify(queries[i], protos, squared);
    loss += -std::log(std::max(scores.p[size_t(y)], kEps));
    if (!grads) continue;
    for (int k = 0; k < way; ++k) {
      // logit_k = -dist_k, so dL/ddist_k = delta(k==y) - p_k
      double coef = ((k == y ? 1.0 : 0.0) - scores.p[size_t(k)]) / double(m);
      // d(dist)/dq and d(dist)/dc, note loss = sum coef * dist up to constants
      double dist = squared ? 0.0 : std::max(distance(queries[i].v, protos.protos[size_t(k)], false), 1e-9);
      for (size_t d = 0; d < dim; ++d) {
        double diff = queries[i].v[d] - protos.protos[size_t(k)][d];
        double dd = squared ? 2.0 * diff : diff / dist;
        grads->dquery[i][d] += coef * dd;
        grads->dproto[size_t(k)][d] -= coef * dd;
      }
    }
  }
  return loss / double(m);
}

std::vector<std::vector<double>> proto_grads_to_support(
    const std::vector<std::vector<double>>& dproto, const std::vector<int>& support_labels,
    int way, int dim) {
  std::vector<int> counts(size_t(way), 0);
  for (int y : support_labels) ++counts[size_t(y)];
  std::vector<std::vector<double>> out(support_labels.size(), std::vector<double>(size_t(dim), 0.0));
  for (size_t i = 0; i < support_labels.size(); ++i) {
    int k = support_labels[i];
    double inv = 1.0 / counts[size_t(k)];
    for (int d = 0; d < dim; ++d) out[i][size_t(d)] = dproto[size_t(k)][size_t(d)] * inv;
  }
  return out;
}

RotationHead::RotationHead(int in_dim, int hidden, uint64_t seed)
    : in_dim_(in_dim), hidden_(hidden) {
  RngStream rng(seed);
  Tensor w1({hidden, in_dim});
  double s1 = std::sqrt(2.0 / in_dim);
  for (long i = 0; i < w1.numel(); ++i) w1[size_t(i)] = rng.normal() * s1;
  params_.add("w1", std::move(w1));
  params_.add("b1", {hidden});
  Tensor w2({4, hidden});
  double s2 = std::sqrt(2.0 / hidden);
  for (long i = 0; i < w2.numel(); ++i) w2[size_t(i)] = rng.normal() * s2;
  params_.add("w2", std::move(w2));
  params_.add("b2", {4});
}

std::vector<double> RotationHead::logits(const std::vector<double>& emb) const {
  const Tensor& w1 = params_.at("w1");
  const Tensor& b1 = params_.at("b1");
  const Tensor& w2 = params_.at("w2");
  const Tensor& b2 = params_.at("b2");
  std::vector<double> h(size_t(hidden_), 0.0);
  for (int j = 0; j < hidden_; ++j) {
    double s = b1[size_t(j)];
    const double* row = w1.data() + size_t(j) * in_dim_;
    for (int d = 0; d < in_dim_; ++d) s += row[d] * emb[size_t(d)];
    h[size_t(j)] = s > 0 ? s : 0.0;
  }
  std::vector<double> z(4, 0.0);
  for (int k = 0; k < 4; ++k) {
    double s = b2[size_t(k)];
    const double* row = w2.data() + size_t(k) * hidden_;
    for (int j = 0; j < hidden_; ++j) s += row[j] * h[size_t(j)];
    z[size_t(k)] = s;
  }
  return z;
}

double RotationHead::loss(const std::vector<Embedding>& embeddings,
                          const std::vector<int>& rotation_labels, ParamState* gparams,
                          std::vector<std::vector<double>>* dembeddings) const {
  size_t n = embeddings.size();
  if (n == 0 || n != rotation_labels.size())
    throw std::invalid_argument("rotation loss: batch size mismatch");
  const Tensor& w1 = params_.at("w1");
  const Tensor& b1 = params_.at("b1");
  const Tensor& w2 = params_.at("w2");
  const Tensor& b2 = params_.at("b2");
  if (dembeddings) dembeddings->assign(n, std::vector<double>(size_t(in_dim_), 0.0));

  double loss = 0;
  std::vector<double> h(static_cast<size_t>(hidden_)), z(4), dh(static_cast<size_t>(hidden_));
  for (size_t i = 0; i < n; ++i) {
    int y = rotation_labels[i];
    if (y < 0 || y > 3) throw std::invalid_argument("rotation label out of range");
    const auto& e = embeddings[i].v;
    for (int j = 0; j < hidden_; ++j) {
      double s = b1[size_t(j)];
      const double* row = w1.data() + size_t(j) * in_dim_;
      for (int d = 0; d < in_dim_; ++d) s += row[d] * e[size_t(d)];
      h[size_t(j)] = s > 0 ? s : 0.0;
    }
    for (int k = 0; k < 4; ++k) {
      double s = b2[size_t(k)];
      const double* row = w2.data() + size_t(k) * hidden_;
      for (int j = 0; j < hidden_; ++j) s += row[j] * h[size_t(j)];
      z[size_t(k)] = s;
    }
    std::vector<double> p = softmax(z);
    loss += -std::log(std::max(p[size_t(y)], kEps));
    if (!gparams && !dembeddings) continue;

    std::fill(dh.begin(), dh.end(), 0.0);
    for (int k = 0; k < 4; ++k) {
      double dz = (p[size_t(k)] - (k == y ? 1.0 : 0.0)) / double(n);
      if (gparams) {
        Tensor& dw2 = gparams->at("w2");
        Tensor& db2 = gparams->at("b2");
        double* row = dw2.data() + size_t(k) * hidden_;
        for (int j = 0; j < hidden_; ++j) row[j] += dz * h[size_t(j)];
        db2[size_t(k)] += dz;
      }
      const double* row = w2.data() + size_t(k) * hidden_;
      for (int j = 0; j < hidden_; ++j) dh[size_t(j)] += dz * row[j];
    }
    for (int j = 0; j < hidden_; ++j) {
      if (h[size_t(j)] <= 0) continue;
      double g = dh[size_t(j)];
      if (gparams) {
        Tensor& dw1 = gparams->at("w1");
        Tensor& db1 = gparams->at("b1");
        double* row = dw1.data() + size_t(j) * in_dim_;
        for (int d = 0; d < in_dim_; ++d) row[d] += g * e[size_t(d)];
        db1[size_t(j)] += g;
      }
      if (dembeddings) {
        const double* row = w1.data() + size_t(j) * in_dim_;
        for (int d = 0; d < in_dim_; ++d) (*dembeddings)[i][size_t(d)] += g * row[d];
      }
    }
  }
  return loss / double(n);
}

namespace {

struct CosineAttention {
  std::vector<double> cos;  // per support sample
  std::vector<double> attn; // softmax of cos
  std::vector<double> score; // per class
};

CosineAttention cosine_attention(const Embedding& query, const std::vector<Embedding>& support,
                                 const std::vector<int>& labels, int way) {
  size_t n = support.size();
  CosineAttention a;
  a.cos.resize(n);
  double qn = std::sqrt(std::inner_product(query.v.begin(), query.v.end(), query.v.begin(), 0.0));
  for (size_t j = 0; j < n; ++j) {
    if (support[j].v.size() != query.v.size())
      throw std::invalid_argument("matching: dimension mismatch");
    double dot = std::inner_product(query.v.begin(), query.v.end(), support[j].v.begin(), 0.0);
    double sn = std::sqrt(
        std::inner_product(support[j].v.begin(), support[j].v.end(), support[j].v.begin(), 0.0));
    a.cos[j] = dot / std::max(qn * sn, kEps);
  }
  a.attn = softmax(a.cos);
  a.score.assign(size_t(way), 0.0);
  for (size_t j = 0; j < n; ++j) a.score[size_t(labels[j])] += a.attn[j];
  return a;
}

}  // namespace

ClassScores matching_scores(const Embedding& query, const std::vector<Embedding>& support,
                            const std::vector<int>& support_labels, int way) {
  return ClassScores{cosine_attention(query, support, support_labels, way).score};
}

double matching_nll(const Embedding& query, int label, const std::vector<Embedding>& support,
                    const std::vector<int>& support_labels, int way, MatchingGrads* grads) {
  CosineAttention a = cosine_attention(query, support, support_labels, way);
  double loss = -std::log(std::max(a.score[size_t(label)], kEps));
  if (!grads) return loss;

  size_t n = support.size();
  size_t dim = query.v.size();
  grads->dquery.assign(dim, 0.0);
  grads->dsupport.assign(n, std::vector<double>(dim, 0.0));

  // dL/dattn_j = -[y_j == label]/score_label, then softmax backward
  double inv_score = 1.0 / std::max(a.score[size_t(label)], kEps);
  std::vector<double> g(n);
  double dot_ga = 0;
  for (size_t j = 0; j < n; ++j) {
    g[j] = support_labels[j] == label ? -inv_score : 0.0;
    dot_ga += g[j] * a.attn[j];
  }
  double qn2 = std::inner_product(query.v.begin(), query.v.end(), query.v.begin(), 0.0);
  double qn = std::sqrt(qn2);
  for (size_t j = 0; j < n; ++j) {
    double dcos = a.attn[j] * (g[j] - dot_ga);
    if (dcos == 0.0) continue;
    double sn2 =
        std::inner_product(support[j].v.begin(), support[j].v.end(), support[j].v.begin(), 0.0);
    double sn = std::sqrt(sn2);
    double denom = std::max(qn * sn, kEps);
    for (size_t d = 0; d < dim; ++d) {
      grads->dquery[d] += dcos * (support[j].v[d] / denom - a.cos[j] * query.v[d] / std::max(qn2, kEps));
      grads->dsupport[j][d] +=
          dcos * (query.v[d] / denom - a.cos[j] * support[j].v[d] / std::max(sn2, kEps));
    }
  }
  return loss;
}

std::vector<FeatureMap> mean_maps(const std::vector<FeatureMap>& maps,
                                  const std::vector<int>& labels, int way) {
  if (maps.empty() || maps.size() != labels.size())
    throw std::invalid_argument("mean_maps: size mismatch");
  std::vector<FeatureMap> out(static_cast<size_t>(way));
  std::vector<int> counts(size_t(way), 0);
  for (size_t i = 0; i < maps.size(); ++i) {
    int k = labels[i];
    FeatureMap& m = out[size_t(k)];
    if (m.v.empty()) {
      m.channels = maps[i].channels;
      m.h = maps[i].h;
      m.w = maps[i].w;
      m.v.assign(maps[i].v.size(), 0.0);
    }
    for (size_t t = 0; t < m.v.size(); ++t) m.v[t] += maps[i].v[t];
    ++counts[size_t(k)];
  }
  for (int k = 0; k < way; ++k) {
    if (counts[size_t(k)] == 0)
      throw std::invalid_argument("mean_maps: class " + std::to_string(k) + " has no maps");
    for (auto& v : out[size_t(k)].v) v /= counts[size_t(k)];
  }
  return out;
}

RelationModule::RelationModule(int feat_channels, int relation_channels, uint64_t seed)
    : feat_c_(feat_channels), rel_c_(relation_channels) {
  RngStream rng(seed);
  Tensor cw({rel_c_, 2 * feat_c_, 3, 3});
  double s = std::sqrt(2.0 / (2 * feat_c_ * 9));
  for (long i = 0; i < cw.numel(); ++i) cw[size_t(i)] = rng.normal() * s;
  params_.add("conv_w", std::move(cw));
  params_.add("conv_b", {rel_c_});
  Tensor fw({rel_c_});
  double sf = std::sqrt(1.0 / rel_c_);
  for (long i = 0; i < fw.numel(); ++i) fw[size_t(i)] = rng.normal() * sf;
  params_.add("fc_w", std::move(fw));
  params_.add("fc_b", {1});
}

std::vector<double> RelationModule::forward_logits(const FeatureMap& query,
                                                   const std::vector<FeatureMap>& class_maps,
                                                   std::vector<FeatureMap>* concat,
                                                   std::vector<FeatureMap>* relu) const {
  int h = query.h, w = query.w;
  const Tensor& cw = params_.at("conv_w");
  const Tensor& cb = params_.at("conv_b");
  const Tensor& fw = params_.at("fc_w");
  const Tensor& fb = params_.at("fc_b");
  std::vector<double> logits(class_maps.size(), 0.0);
  MatRM col;
  for (size_t k = 0; k < class_maps.size(); ++k) {
    if (class_maps[k].channels != feat_c_ || query.channels != feat_c_)
      throw std::invalid_argument("relation: dimension mismatch");
    FeatureMap x;
    x.channels = 2 * feat_c_;
    x.h = h;
    x.w = w;
    x.v = query.v;
    x.v.insert(x.v.end(), class_maps[k].v.begin(), class_maps[k].v.end());
    detail::im2col3(x.v.data(), x.channels, h, w, col);
    CMapRM Wm(cw.data(), rel_c_, x.channels * 9);
    MatRM z = Wm * col;
    FeatureMap r;
    r.channels = rel_c_;
    r.h = h;
    r.w = w;
    r.v.assign(size_t(rel_c_) * h * w, 0.0);
    double logit = fb[0];
    double inv_hw = 1.0 / (h * w);
    for (int oc = 0; oc < rel_c_; ++oc) {
      double gap = 0;
      double* rr = r.v.data() + size_t(oc) * h * w;
      const double* zr = z.row(oc).data();
      for (int i = 0; i < h * w; ++i) {
        double v = zr[i] + cb[size_t(oc)];
        rr[i] = v > 0 ? v : 0.0;
        gap += rr[i];
      }
      logit += fw[size_t(oc)] * gap * inv_hw;
    }
    logits[k] = logit;
    if (concat) concat->push_back(std::move(x));
    if (relu) relu->push_back(std::move(r));
  }
  return logits;
}

ClassScores RelationModule::scores(const FeatureMap& query,
                                   const std::vector<FeatureMap>& class_maps) const {
  return ClassScores{softmax(forward_logits(query, class_maps, nullptr, nullptr))};
}

double RelationModule::nll(const FeatureMap& query, int label,
                           const std::vector<FeatureMap>& class_maps, ParamState* gparams,
                           Grads* grads) const {
  std::vector<FeatureMap> concat, relu;
  std::vector<double> logits = forward_logits(query, class_maps, &concat, &relu);
  std::vector<double> p = softmax(logits);
  double loss = -std::log(std::max(p[size_t(label)], kEps));
  if (!gparams && !grads) return loss;

  int h = query.h, w = query.w;
  const Tensor& cw = params_.at("conv_w");
  const Tensor& fw = params_.at("fc_w");
  if (grads) {
    grads->dquery.channels = feat_c_;
    grads->dquery.h = h;
    grads->dquery.w = w;
    grads->dquery.v.assign(query.v.size(), 0.0);
    grads->dclass_maps.assign(class_maps.size(), FeatureMap());
  }
  MatRM dz(rel_c_, h * w), dcol;
  double inv_hw = 1.0 / (h * w);
  for (size_t k = 0; k < class_maps.size(); ++k) {
    double dlogit = p[k] - (int(k) == label ? 1.0 : 0.0);
    const FeatureMap& r = relu[k];
    // fc backward + GAP spread + ReLU mask
    for (int oc = 0; oc < rel_c_; ++oc) {
      const double* rr = r.v.data() + size_t(oc) * h * w;
      double* dzr = dz.row(oc).data();
      double gap = 0;
      double g = dlogit * fw[size_t(oc)] * inv_hw;
      for (int i = 0; i < h * w; ++i) {
        gap += rr[i];
        dzr[i] = rr[i] > 0 ? g : 0.0;
      }
      if (gparams) {
        gparams->at("fc_w")[size_t(oc)] += dlogit * gap * inv_hw;
      }
    }
    if (gparams) {
      gparams->at("fc_b")[0] += dlogit;
      Tensor& dcb = gparams->at("conv_b");
      for (int oc = 0; oc < rel_c_; ++oc) dcb[size_t(oc)] += dz.row(oc).sum();
      MatRM col;
      detail::im2col3(concat[k].v.data(), 2 * feat_c_, h, w, col);
      MapRM dWm(gparams->at("conv_w").data(), rel_c_, 2 * feat_c_ * 9);
      dWm.noalias() += dz * col.transpose();
    }
    if (grads) {
      CMapRM Wm(cw.data(), rel_c_, 2 * feat_c_ * 9);
      dcol.noalias() = Wm.transpose() * dz;
      std::vector<double> dx(size_t(2 * feat_c_) * h * w, 0.0);
      detail::col2im3(dcol, 2 * feat_c_, h, w, dx.data());
      for (size_t t = 0; t < query.v.size(); ++t) grads->dquery.v[t] += dx[t];
      FeatureMap& dcm = grads->dclass_maps[k];
      dcm.channels = feat_c_;
      dcm.h = h;
      dcm.w = w;
      dcm.v.assign(dx.begin() + long(query.v.size()), dx.end());
    }
  }
  return loss;
}

}  // namespace st
