#include <doctest.h>

#include <cmath>

#include "st/backbone.hpp"
#include "st/rng.hpp"

using namespace st;

namespace {

LabeledImage random_image(int side, uint64_t seed) {
  LabeledImage im = LabeledImage::blank(side);
  RngStream rng(seed);
  for (auto& v : im.pix) v = rng.uniform();
  return im;
}

}  // namespace

TEST_CASE("84x84 input through the default encoder gives a 64x5x5 map") {
  Encoder enc(EncoderConfig{}, 1);
  LabeledImage im = random_image(84, 2);
  FeatureMap m = enc.encode_map(im);
  CHECK(m.channels == 64);
  CHECK(m.h == 5);
  CHECK(m.w == 5);
  Embedding e = pool(m);
  CHECK(e.v.size() == 64);
  for (double v : e.v) CHECK(std::isfinite(v));
}

TEST_CASE("identical inputs and params give identical maps") {
  Encoder enc(EncoderConfig{"conv4", 8, 2}, 3);
  LabeledImage im = random_image(16, 4);
  FeatureMap a = enc.encode_map(im);
  FeatureMap b = enc.encode_map(im);
  CHECK(a.v == b.v);
}

TEST_CASE("all-zero input maps to all-zero features") {
  // fresh init has zero conv bias and zero beta, so zero input stays zero
  Encoder enc(EncoderConfig{"conv4", 8, 2}, 5);
  LabeledImage im = LabeledImage::blank(16);
  FeatureMap m = enc.encode_map(im);
  for (double v : m.v) CHECK(v == 0.0);
}

TEST_CASE("pool is the spatial mean") {
  FeatureMap m;
  m.channels = 2;
  m.h = m.w = 2;
  m.v = {1, 2, 3, 4, 5, 5, 5, 5};
  Embedding e = pool(m);
  CHECK(e.v[0] == doctest::Approx(2.5));
  CHECK(e.v[1] == doctest::Approx(5.0));
}

TEST_CASE("clone then mutate leaves the original unchanged") {
  Encoder enc(EncoderConfig{"conv4", 6, 2}, 7);
  ParamState copy = clone_params(enc.params());
  copy.entries()[0].value[0] += 1.0;
  CHECK(copy.entries()[0].value[0] != enc.params().entries()[0].value[0]);
  CHECK_FALSE(params_equal(copy, enc.params()));
  load_params(copy, enc.params());
  CHECK(params_equal(copy, enc.params()));
}

TEST_CASE("load_params names the missing key") {
  Encoder enc(EncoderConfig{"conv4", 6, 2}, 7);
  ParamState partial;
  partial.add("b0.conv_w", enc.params().at("b0.conv_w"));
  CHECK_THROWS_WITH_AS(load_params(enc.params(), partial), doctest::Contains("b0.conv_b"),
                       std::runtime_error);
}

TEST_CASE("running stats move only when requested") {
  Encoder enc(EncoderConfig{"conv4", 6, 2}, 9);
  LabeledImage im = random_image(16, 1);
  Tensor before = enc.params().at("b0.run_mean");
  enc.encode_map(im, nullptr, /*update_stats=*/false);
  CHECK(enc.params().at("b0.run_mean").raw() == before.raw());
  enc.encode_map(im, nullptr, /*update_stats=*/true);
  CHECK(enc.params().at("b0.run_mean").raw() != before.raw());
}

TEST_CASE("encoder gradients match central finite differences") {
  EncoderConfig cfg{"conv4", 5, 2};
  Encoder enc(cfg, 11);
  LabeledImage im = random_image(8, 12);

  // scalar loss: fixed random weighting of the pooled embedding
  RngStream wrng(13);
  std::vector<double> w(size_t(cfg.width));
  for (auto& v : w) v = wrng.normal();

  auto loss_at = [&](Encoder& e) {
    Embedding emb = pool(e.encode_map(im));
    double s = 0;
    for (size_t d = 0; d < w.size(); ++d) s += w[d] * emb.v[d];
    return s;
  };

  Encoder::Cache cache;
  FeatureMap m = enc.encode_map(im, &cache);
  FeatureMap dmap = pool_backward(w, m);
  ParamState grads = ParamState::zeros_like(enc.params());
  enc.backward(cache, dmap, grads);

  RngStream pick(14);
  const double h = 1e-5;
  int checked = 0;
  for (auto& entry : enc.params().entries()) {
    if (!entry.trainable) continue;
    for (int rep = 0; rep < 6; ++rep) {
      long j = long(pick.uniform_int(int(entry.value.numel())));
      double orig = entry.value[size_t(j)];
      entry.value[size_t(j)] = orig + h;
      double lp = loss_at(enc);
      entry.value[size_t(j)] = orig - h;
      double lm = loss_at(enc);
      entry.value[size_t(j)] = orig;
      double fd = (lp - lm) / (2 * h);
      double an = grads.at(entry.name)[size_t(j)];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK_MESSAGE(std::abs(fd - an) / denom <= 1e-3,
                    entry.name << "[" << j << "]: fd=" << fd << " an=" << an);
      ++checked;
    }
  }
  CHECK(checked >= 24);
}
