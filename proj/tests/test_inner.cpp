#include <doctest.h>

#include <cmath>

#include "st/inner.hpp"
#include "st/optim.hpp"
#include "st/wsol.hpp"

using namespace st;

namespace {

LabeledImage random_image(int side, uint64_t seed, int class_id) {
  LabeledImage im = LabeledImage::blank(side, class_id);
  RngStream rng(seed);
  for (auto& v : im.pix) v = rng.uniform();
  return im;
}

ExpandedSupportSet make_sprime(int way, int shot, uint64_t seed, int side = 16,
                               int g_self = 1, int g_exch = 3) {
  std::vector<LabeledImage> support;
  for (int c = 0; c < way; ++c)
    for (int k = 0; k < shot; ++k)
      support.push_back(random_image(side, seed * 100 + uint64_t(c * 10 + k), c));
  std::vector<FgBgPair> pairs;
  for (const auto& im : support) pairs.push_back(split_fg_bg(im, ObjectBox{2, 2, side / 2}));
  ExpandConfig cfg;
  cfg.g_self = g_self;
  cfg.g_exch = g_exch;
  RngStream rng(seed);
  return build_expanded_set(support, pairs, cfg, rng);
}

}  // namespace

TEST_CASE("inner episode counting and determinism") {
  ExpandedSupportSet sp = make_sprime(5, 1, 3);
  REQUIRE(sp.samples.size() == 25);
  RngStream r1(4), r2(4);
  InnerEpisode a = sample_inner_episode(sp, 5, 1, 25, r1);
  InnerEpisode b = sample_inner_episode(sp, 5, 1, 25, r2);
  CHECK(a.support_idx == b.support_idx);
  CHECK(a.query_idx == b.query_idx);
  CHECK(a.support_idx.size() == 5);
  CHECK(a.query_idx.size() <= 25);
  CHECK_FALSE(a.reused_support);
  // support and query never overlap when members remain
  for (int s : a.support_idx)
    for (int q : a.query_idx) CHECK(s != q);
}

TEST_CASE("query falls back to support reuse when classes have exactly shot members") {
  ExpandedSupportSet sp = make_sprime(3, 1, 5, 16, /*g_self=*/0, /*g_exch=*/0);
  REQUIRE(sp.samples.size() == 3);
  RngStream rng(6);
  InnerEpisode ep = sample_inner_episode(sp, 3, 1, 15, rng);
  CHECK(ep.reused_support);
  CHECK(ep.query_idx.size() == 3);
}

TEST_CASE("inner loss is affine in lambda with slope Loss_rot") {
  ExpandedSupportSet sp = make_sprime(3, 1, 7);
  Encoder enc(EncoderConfig{"conv4", 6, 2}, 8);
  RotationHead rot(6, 8, 9);
  RngStream rng(10);
  InnerEpisode ep = sample_inner_episode(sp, 3, 1, 9, rng);

  auto at_lambda = [&](double lam) {
    return inner_loss(enc, "proto", nullptr, rot, lam, true, sp, ep);
  };
  ObjectiveResult l0 = at_lambda(0.0);
  ObjectiveResult l1 = at_lambda(1.0);
  ObjectiveResult lp1 = at_lambda(0.1);
  CHECK(l0.loss_total == doctest::Approx(l0.loss_fs).epsilon(1e-12));
  double slope = l1.loss_total - l0.loss_total;
  CHECK(slope == doctest::Approx(l1.loss_rot).epsilon(1e-9));
  CHECK(lp1.loss_total == doctest::Approx(l0.loss_total + 0.1 * slope).epsilon(1e-9));
}

TEST_CASE("adapt never mutates the outer parameters") {
  ExpandedSupportSet sp = make_sprime(3, 1, 11);
  Encoder enc(EncoderConfig{"conv4", 6, 2}, 12);
  ParamState before = clone_params(enc.params());
  InnerConfig cfg;
  cfg.alpha = 3;
  cfg.way = 3;
  RngStream rng(13);
  AdaptResult r = adapt(enc, nullptr, sp, cfg, rng);
  CHECK(params_equal(enc.params(), before));
  CHECK(r.loss_trace.size() == 3);
  CHECK_FALSE(params_equal(r.encoder_params, before));
}

TEST_CASE("alpha=0 and lr=0 leave theta' identical to theta") {
  ExpandedSupportSet sp = make_sprime(3, 1, 14);
  Encoder enc(EncoderConfig{"conv4", 6, 2}, 15);
  InnerConfig cfg;
  cfg.way = 3;

  cfg.alpha = 0;
  RngStream r1(16);
  AdaptResult a = adapt(enc, nullptr, sp, cfg, r1);
  CHECK(params_equal(a.encoder_params, enc.params()));

  cfg.alpha = 4;
  cfg.lr = 0.0;
  RngStream r2(16);
  AdaptResult b = adapt(enc, nullptr, sp, cfg, r2);
  CHECK(params_equal(b.encoder_params, enc.params()));
  CHECK(b.loss_trace.size() == 4);
}

TEST_CASE("repeated steps on one fixed inner episode reduce the loss") {
  // statistical: final < initial in >= 95% of 100 seeded trials
  int improved = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    uint64_t seed = 1000 + uint64_t(t);
    ExpandedSupportSet sp = make_sprime(3, 1, seed, 12);
    Encoder enc(EncoderConfig{"conv4", 4, 2}, seed + 1);
    RotationHead rot(4, 8, seed + 2);
    RngStream rng(seed + 3);
    InnerEpisode ep = sample_inner_episode(sp, 3, 1, 9, rng);

    SgdMomentum enc_opt(0.01, 0.9), rot_opt(0.01, 0.9);
    double initial = 0, final_loss = 0;
    for (int step = 0; step < 5; ++step) {
      ParamState eg = ParamState::zeros_like(enc.params());
      ParamState rg = ParamState::zeros_like(rot.params());
      ObjectiveResult r = inner_loss(enc, "proto", nullptr, rot, 0.1, true, sp, ep, &eg,
                                     nullptr, &rg);
      if (step == 0) initial = r.loss_total;
      final_loss = r.loss_total;
      enc_opt.step(enc.params(), eg);
      rot_opt.step(rot.params(), rg);
    }
    if (final_loss < initial) ++improved;
  }
  CHECK(improved >= 95);
}
