#include <doctest.h>

#include <cmath>

#include "st/heads.hpp"
#include "st/rng.hpp"

using namespace st;

namespace {

Embedding emb(std::vector<double> v) { return Embedding{std::move(v)}; }

std::vector<Embedding> random_embs(int n, int dim, uint64_t seed) {
  std::vector<Embedding> out;
  RngStream rng(seed);
  for (int i = 0; i < n; ++i) {
    Embedding e;
    for (int d = 0; d < dim; ++d) e.v.push_back(rng.normal());
    out.push_back(std::move(e));
  }
  return out;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("prototypes are per-class means") {
  std::vector<Embedding> e{emb({0, 0}), emb({2, 2}), emb({5, 1})};
  PrototypeSet p = prototypes(e, {0, 0, 1}, 2);
  CHECK(p.protos[0][0] == doctest::Approx(1.0));
  CHECK(p.protos[0][1] == doctest::Approx(1.0));
  CHECK(p.protos[1][0] == doctest::Approx(5.0));
  CHECK(p.protos[1][1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(prototypes(e, {0, 0, 0}, 2), std::invalid_argument);
}

TEST_CASE("prototypes match a scalar loop oracle and are order invariant") {
  std::vector<Embedding> e = random_embs(25, 8, 3);
  std::vector<int> labels;
  for (int i = 0; i < 25; ++i) labels.push_back(i % 5);
  PrototypeSet p = prototypes(e, labels, 5);
  for (int k = 0; k < 5; ++k)
    for (int d = 0; d < 8; ++d) {
      double s = 0;
      int cnt = 0;
      for (int i = 0; i < 25; ++i)
        if (labels[size_t(i)] == k) {
          s += e[size_t(i)].v[size_t(d)];
          ++cnt;
        }
      CHECK(p.protos[size_t(k)][size_t(d)] == doctest::Approx(s / cnt).epsilon(1e-12));
    }
  // permute within-class order
  std::vector<Embedding> e2(e.rbegin(), e.rend());
  std::vector<int> l2(labels.rbegin(), labels.rend());
  PrototypeSet p2 = prototypes(e2, l2, 5);
  for (int k = 0; k < 5; ++k)
    for (int d = 0; d < 8; ++d)
      CHECK(p.protos[size_t(k)][size_t(d)] ==
            doctest::Approx(p2.protos[size_t(k)][size_t(d)]).epsilon(1e-12));
}

TEST_CASE("classify: equidistant prototypes give uniform scores") {
  PrototypeSet p;
  p.protos = {{1, 0}, {-1, 0}};
  ClassScores s = classify(emb({0, 0}), p);
  CHECK(s.p[0] == doctest::Approx(0.5));
  CHECK(s.p[1] == doctest::Approx(0.5));
}

TEST_CASE("classify: query at a prototype dominates") {
  PrototypeSet p;
  p.protos = {{0, 0}, {10, 10}};
  ClassScores s = classify(emb({0, 0}), p);
  CHECK(s.p[0] > 0.99);
  CHECK(s.argmax() == 0);
}

TEST_CASE("classify matches a direct softmax oracle within 1e-6") {
  RngStream rng(7);
  PrototypeSet p;
  for (int k = 0; k < 4; ++k) {
    std::vector<double> v;
    for (int d = 0; d < 6; ++d) v.push_back(rng.normal());
    p.protos.push_back(std::move(v));
  }
  std::vector<Embedding> queries = random_embs(10, 6, 8);
  for (bool squared : {true, false}) {
    for (const auto& q : queries) {
      ClassScores s = classify(q, p, squared);
      double z = 0, sum = 0;
      std::vector<double> ex(4);
      for (int k = 0; k < 4; ++k) {
        double d = sq_dist(q.v, p.protos[size_t(k)]);
        if (!squared) d = std::sqrt(d);
        ex[size_t(k)] = std::exp(-d);
        sum += ex[size_t(k)];
      }
      z = 0;
      for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(s.p[size_t(k)] - ex[size_t(k)] / sum) < 1e-6);
        z += s.p[size_t(k)];
      }
      CHECK(std::abs(z - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("fewshot_nll on two equidistant prototypes equals ln 2") {
  PrototypeSet p;
  p.protos = {{1, 0}, {-1, 0}};
  double loss = fewshot_nll({emb({0, 0})}, {0}, p);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  PrototypeSet p4;
  p4.protos = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  CHECK(fewshot_nll({emb({0, 0})}, {2}, p4) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("fewshot_nll equals -mean log classify[label]") {
  RngStream rng(9);
  PrototypeSet p;
  for (int k = 0; k < 5; ++k) {
    std::vector<double> v;
    for (int d = 0; d < 7; ++d) v.push_back(rng.normal());
    p.protos.push_back(std::move(v));
  }
  std::vector<Embedding> queries = random_embs(12, 7, 10);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 5);
  for (bool squared : {true, false}) {
    double loss = fewshot_nll(queries, labels, p, squared);
    double oracle = 0;
    for (size_t i = 0; i < queries.size(); ++i)
      oracle += -std::log(classify(queries[i], p, squared).p[size_t(labels[i])]);
    oracle /= double(queries.size());
    CHECK(std::abs(loss - oracle) < 1e-6);
  }
}

TEST_CASE("fewshot_nll query gradients match finite differences") {
  PrototypeSet p;
  RngStream rng(11);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> v;
    for (int d = 0; d < 5; ++d) v.push_back(rng.normal());
    p.protos.push_back(std::move(v));
  }
  std::vector<Embedding> queries = random_embs(6, 5, 12);
  std::vector<int> labels{0, 1, 2, 0, 1, 2};
  for (bool squared : {true, false}) {
    FewshotGrads g;
    fewshot_nll(queries, labels, p, squared, &g);
    const double h = 1e-6;
    for (size_t i = 0; i < queries.size(); ++i)
      for (int d = 0; d < 5; ++d) {
        auto qp = queries;
        qp[i].v[size_t(d)] += h;
        auto qm = queries;
        qm[i].v[size_t(d)] -= h;
        double fd =
            (fewshot_nll(qp, labels, p, squared) - fewshot_nll(qm, labels, p, squared)) / (2 * h);
        double an = g.dquery[i][size_t(d)];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CHECK(std::abs(fd - an) / denom < 1e-3);
      }
    // prototype gradients via central differences
    for (int k = 0; k < 3; ++k)
      for (int d = 0; d < 5; ++d) {
        PrototypeSet pp = p, pm = p;
        pp.protos[size_t(k)][size_t(d)] += h;
        pm.protos[size_t(k)][size_t(d)] -= h;
        double fd =
            (fewshot_nll(queries, labels, pp, squared) - fewshot_nll(queries, labels, pm, squared)) /
            (2 * h);
        double an = g.dproto[size_t(k)][size_t(d)];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CHECK(std::abs(fd - an) / denom < 1e-3);
      }
  }
}

TEST_CASE("proto_grads_to_support spreads by 1/count") {
  std::vector<std::vector<double>> dproto{{2.0, 4.0}, {3.0, 6.0}};
  std::vector<int> labels{0, 0, 1};
  auto ds = proto_grads_to_support(dproto, labels, 2, 2);
  CHECK(ds[0][0] == doctest::Approx(1.0));
  CHECK(ds[1][1] == doctest::Approx(2.0));
  CHECK(ds[2][0] == doctest::Approx(3.0));
  CHECK(ds[2][1] == doctest::Approx(6.0));
}

TEST_CASE("rotation loss matches a scalar cross-entropy oracle") {
  RotationHead head(6, 16, 21);
  std::vector<Embedding> e = random_embs(8, 6, 22);
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  double loss = head.loss(e, labels);
  double oracle = 0;
  for (size_t i = 0; i < e.size(); ++i) {
    std::vector<double> z = head.logits(e[i].v);
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0;
    for (double v : z) sum += std::exp(v - mx);
    oracle += -(z[size_t(labels[i])] - mx - std::log(sum));
  }
  oracle /= double(e.size());
  CHECK(std::abs(loss - oracle) < 1e-6);
}

TEST_CASE("rotation loss gradients match finite differences") {
  RotationHead head(4, 8, 23);
  std::vector<Embedding> e = random_embs(5, 4, 24);
  std::vector<int> labels{0, 3, 1, 2, 0};
  ParamState g = ParamState::zeros_like(head.params());
  std::vector<std::vector<double>> de;
  head.loss(e, labels, &g, &de);
  const double h = 1e-6;
  for (auto& entry : head.params().entries()) {
    for (long j = 0; j < entry.value.numel(); ++j) {
      double orig = entry.value[size_t(j)];
      entry.value[size_t(j)] = orig + h;
      double lp = head.loss(e, labels);
      entry.value[size_t(j)] = orig - h;
      double lm = head.loss(e, labels);
      entry.value[size_t(j)] = orig;
      double fd = (lp - lm) / (2 * h);
      double an = g.at(entry.name)[size_t(j)];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      CHECK(std::abs(fd - an) / denom < 1e-3);
    }
  }
  for (size_t i = 0; i < e.size(); ++i)
    for (size_t d = 0; d < 4; ++d) {
      auto ep = e, em = e;
      ep[i].v[d] += h;
      em[i].v[d] -= h;
      double fd = (head.loss(ep, labels) - head.loss(em, labels)) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(de[i][d]), 1e-8});
      CHECK(std::abs(fd - de[i][d]) / denom < 1e-3);
    }
}

TEST_CASE("matching scores: identical support wins, sums to 1, matches oracle") {
  std::vector<Embedding> support = random_embs(6, 5, 31);
  std::vector<int> labels{0, 1, 2, 0, 1, 2};
  ClassScores s = matching_scores(support[3], support, labels, 3);
  CHECK(s.argmax() == 0);
  double sum = 0;
  for (double v : s.p) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-6);

  // loop oracle: cosine -> softmax over support -> aggregate per class
  Embedding q = random_embs(1, 5, 32)[0];
  ClassScores got = matching_scores(q, support, labels, 3);
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s2 = 0;
    for (size_t i = 0; i < a.size(); ++i) s2 += a[i] * b[i];
    return s2;
  };
  std::vector<double> cos(6);
  for (int j = 0; j < 6; ++j)
    cos[size_t(j)] = dot(q.v, support[size_t(j)].v) /
                     (std::sqrt(dot(q.v, q.v)) * std::sqrt(dot(support[size_t(j)].v,
                                                               support[size_t(j)].v)));
  double mx = *std::max_element(cos.begin(), cos.end());
  double z = 0;
  for (double c : cos) z += std::exp(c - mx);
  std::vector<double> expect(3, 0.0);
  for (int j = 0; j < 6; ++j) expect[size_t(labels[size_t(j)])] += std::exp(cos[size_t(j)] - mx) / z;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(got.p[size_t(k)] - expect[size_t(k)]) < 1e-6);
}

TEST_CASE("matching_nll gradients match finite differences") {
  std::vector<Embedding> support = random_embs(4, 4, 33);
  std::vector<int> labels{0, 1, 0, 1};
  Embedding q = random_embs(1, 4, 34)[0];
  MatchingGrads g;
  matching_nll(q, 1, support, labels, 2, &g);
  const double h = 1e-6;
  for (size_t d = 0; d < 4; ++d) {
    Embedding qp = q, qm = q;
    qp.v[d] += h;
    qm.v[d] -= h;
    double fd = (matching_nll(qp, 1, support, labels, 2) -
                 matching_nll(qm, 1, support, labels, 2)) /
                (2 * h);
    double denom = std::max({std::abs(fd), std::abs(g.dquery[d]), 1e-8});
    CHECK(std::abs(fd - g.dquery[d]) / denom < 1e-3);
  }
  for (size_t j = 0; j < support.size(); ++j)
    for (size_t d = 0; d < 4; ++d) {
      auto sp = support, sm = support;
      sp[j].v[d] += h;
      sm[j].v[d] -= h;
      double fd =
          (matching_nll(q, 1, sp, labels, 2) - matching_nll(q, 1, sm, labels, 2)) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(g.dsupport[j][d]), 1e-8});
      CHECK(std::abs(fd - g.dsupport[j][d]) / denom < 1e-3);
    }
}

namespace {

FeatureMap random_fmap(int c, int h, int w, uint64_t seed) {
  FeatureMap m;
  m.channels = c;
  m.h = h;
  m.w = w;
  m.v.resize(size_t(c) * h * w);
  RngStream rng(seed);
  for (auto& v : m.v) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("relation module with zeroed weights scores uniformly") {
  RelationModule rel(3, 4, 41);
  rel.params().zero_all();
  FeatureMap q = random_fmap(3, 4, 4, 42);
  std::vector<FeatureMap> cls{random_fmap(3, 4, 4, 43), random_fmap(3, 4, 4, 44)};
  ClassScores s = rel.scores(q, cls);
  CHECK(s.p[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(rel.nll(q, 0, cls) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("relation nll gradients match finite differences") {
  RelationModule rel(2, 3, 45);
  FeatureMap q = random_fmap(2, 3, 3, 46);
  std::vector<FeatureMap> cls{random_fmap(2, 3, 3, 47), random_fmap(2, 3, 3, 48)};
  ParamState g = ParamState::zeros_like(rel.params());
  RelationModule::Grads rg;
  rel.nll(q, 1, cls, &g, &rg);
  const double h = 1e-6;
  for (auto& entry : rel.params().entries()) {
    RngStream pick(49);
    for (int rep = 0; rep < 8; ++rep) {
      long j = long(pick.uniform_int(int(entry.value.numel())));
      double orig = entry.value[size_t(j)];
      entry.value[size_t(j)] = orig + h;
      double lp = rel.nll(q, 1, cls);
      entry.value[size_t(j)] = orig - h;
      double lm = rel.nll(q, 1, cls);
      entry.value[size_t(j)] = orig;
      double fd = (lp - lm) / (2 * h);
      double an = g.at(entry.name)[size_t(j)];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      CHECK(std::abs(fd - an) / denom < 1e-3);
    }
  }
  for (size_t t = 0; t < q.v.size(); ++t) {
    FeatureMap qp = q, qm = q;
    qp.v[t] += h;
    qm.v[t] -= h;
    double fd = (rel.nll(qp, 1, cls) - rel.nll(qm, 1, cls)) / (2 * h);
    double denom = std::max({std::abs(fd), std::abs(rg.dquery.v[t]), 1e-8});
    CHECK(std::abs(fd - rg.dquery.v[t]) / denom < 1e-3);
  }
  for (size_t k = 0; k < cls.size(); ++k)
    for (size_t t = 0; t < cls[k].v.size(); ++t) {
      auto cp = cls, cm = cls;
      cp[k].v[t] += h;
      cm[k].v[t] -= h;
      double fd = (rel.nll(q, 1, cp) - rel.nll(q, 1, cm)) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(rg.dclass_maps[k].v[t]), 1e-8});
      CHECK(std::abs(fd - rg.dclass_maps[k].v[t]) / denom < 1e-3);
    }
}

TEST_CASE("mean_maps averages per class") {
  FeatureMap a = random_fmap(2, 2, 2, 51), b = random_fmap(2, 2, 2, 52),
             c = random_fmap(2, 2, 2, 53);
  auto means = mean_maps({a, b, c}, {0, 0, 1}, 2);
  for (size_t t = 0; t < a.v.size(); ++t) {
    CHECK(means[0].v[t] == doctest::Approx((a.v[t] + b.v[t]) / 2).epsilon(1e-12));
    CHECK(means[1].v[t] == doctest::Approx(c.v[t]).epsilon(1e-12));
  }
}
