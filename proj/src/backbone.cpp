#include "st/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "st/detail/conv3.hpp"
#include "st/rng.hpp"

namespace st {

using detail::CMapRM;
using detail::MapRM;
using detail::MatRM;
using detail::col2im3;
using detail::im2col3;

void ParamState::add(const std::string& name, std::vector<int> shape, bool trainable) {
  add(name, Tensor(std::move(shape)), trainable);
}

void ParamState::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("ParamState: duplicate name " + name);
  index_[name] = entries_.size();
  entries_.push_back(ParamEntry{name, std::move(value), trainable});
}

Tensor& ParamState::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamState: no parameter named '" + name + "'");
  return entries_[it->second].value;
}

const Tensor& ParamState::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamState: no parameter named '" + name + "'");
  return entries_[it->second].value;
}

bool ParamState::trainable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamState: no parameter named '" + name + "'");
  return entries_[it->second].trainable;
}

void ParamState::zero_all() {
  for (auto& e : entries_) e.value.zero();
}

ParamState ParamState::zeros_like(const ParamState& other) {
  ParamState out;
  for (const auto& e : other.entries_) out.add(e.name, Tensor(e.value.shape()), e.trainable);
  return out;
}

void ParamState::merge(const ParamState& src, const std::string& prefix) {
  for (const auto& e : src.entries()) add(prefix + e.name, e.value, e.trainable);
}

ParamState clone_params(const ParamState& src) { return src; }

void load_params(ParamState& dst, const ParamState& src) {
  for (auto& e : dst.entries()) {
    if (!src.has(e.name))
      throw std::runtime_error("load_params: source is missing parameter '" + e.name + "'");
    const Tensor& t = src.at(e.name);
    if (!t.same_shape(e.value))
      throw std::runtime_error("load_params: shape mismatch on '" + e.name + "': " +
                               Tensor::shape_str(e.value.shape()) + " vs " +
                               Tensor::shape_str(t.shape()));
    e.value = t;
  }
}

bool params_equal(const ParamState& a, const ParamState& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    if (ea.name != eb.name || !ea.value.same_shape(eb.value)) return false;
    if (ea.value.raw() != eb.value.raw()) return false;
  }
  return true;
}

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kStatsMomentum = 0.01;

std::string bname(int i, const char* suffix) {
  return "b" + std::to_string(i) + "." + suffix;
}

}  // namespace

void Encoder::validate_arch() const {
  if (cfg_.tier != "conv4")
    throw std::invalid_argument("unknown encoder tier '" + cfg_.tier +
                                "' (only 'conv4' is implemented; larger backbones plug in "
                                "through the same interface)");
  if (cfg_.blocks < 1 || cfg_.width < 1) throw std::invalid_argument("bad encoder config");
}

Encoder::Encoder(EncoderConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  validate_arch();
  RngStream rng(init_seed);
  int in_c = cfg_.in_channels;
  for (int b = 0; b < cfg_.blocks; ++b) {
    int out_c = cfg_.width;
    Tensor w({out_c, in_c, 3, 3});
    double scale = std::sqrt(2.0 / (in_c * 9));  // fan-in
    for (long i = 0; i < w.numel(); ++i) w[size_t(i)] = rng.normal() * scale;
    params_.add(bname(b, "conv_w"), std::move(w));
    params_.add(bname(b, "conv_b"), {out_c});
    // final-block gain > 1 keeps episodic distance logits O(1) despite
    // the spatial mean pooling; with unit gain the softmax starts
    // near-uniform and metric training crawls
    Tensor gamma({out_c});
    gamma.fill(b + 1 == cfg_.blocks ? 4.0 : 1.0);
    params_.add(bname(b, "gamma"), std::move(gamma));
    params_.add(bname(b, "beta"), {out_c});
    params_.add(bname(b, "run_mean"), {out_c}, /*trainable=*/false);
    Tensor rv({out_c});
    rv.fill(1.0);
    params_.add(bname(b, "run_var"), std::move(rv), /*trainable=*/false);
    in_c = out_c;
  }
}

Encoder::Encoder(EncoderConfig cfg, ParamState params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  validate_arch();
}

int Encoder::map_side(int input_side) const {
  int s = input_side;
  for (int b = 0; b < cfg_.blocks; ++b) s /= 2;
  return s;
}

FeatureMap Encoder::encode_map(const LabeledImage& image, Cache* cache, bool update_stats) {
  if (cfg_.expected_side > 0 && image.side != cfg_.expected_side)
    throw std::runtime_error("encode_map: input side " + std::to_string(image.side) +
                             " does not match configured side " +
                             std::to_string(cfg_.expected_side));
  if (map_side(image.side) < 2)
    throw std::runtime_error("encode_map: input side " + std::to_string(image.side) +
                             " too small for " + std::to_string(cfg_.blocks) + " blocks");

  if (cache) {
    cache->block_in.assign(size_t(cfg_.blocks), Tensor());
    cache->xhat.assign(size_t(cfg_.blocks), Tensor());
    cache->relu_out.assign(size_t(cfg_.blocks), Tensor());
  }

  Tensor x({cfg_.in_channels, image.side, image.side}, image.pix);
  int c = cfg_.in_channels, h = image.side, w = image.side;
  MatRM col;

  for (int b = 0; b < cfg_.blocks; ++b) {
    if (cache) cache->block_in[size_t(b)] = x;
    const Tensor& W = params_.at(bname(b, "conv_w"));
    const Tensor& bias = params_.at(bname(b, "conv_b"));
    int out_c = W.shape()[0];
    im2col3(x.data(), c, h, w, col);
    CMapRM Wm(W.data(), out_c, c * 9);
    MatRM z = Wm * col;
    for (int oc = 0; oc < out_c; ++oc) z.row(oc).array() += bias[size_t(oc)];

    Tensor& rm = params_.at(bname(b, "run_mean"));
    Tensor& rv = params_.at(bname(b, "run_var"));
    if (update_stats) {
      for (int oc = 0; oc < out_c; ++oc) {
        double m = z.row(oc).mean();
        double var = (z.row(oc).array() - m).square().mean();
        rm[size_t(oc)] = (1 - kStatsMomentum) * rm[size_t(oc)] + kStatsMomentum * m;
        rv[size_t(oc)] = (1 - kStatsMomentum) * rv[size_t(oc)] + kStatsMomentum * var;
      }
    }
    const Tensor& gamma = params_.at(bname(b, "gamma"));
    const Tensor& beta = params_.at(bname(b, "beta"));

    // normalize with running stats (constants in backward), affine, ReLU
    Tensor xhat({out_c, h, w});
    Tensor r({out_c, h, w});
    for (int oc = 0; oc < out_c; ++oc) {
      double inv = 1.0 / std::sqrt(rv[size_t(oc)] + kNormEps);
      double mu = rm[size_t(oc)];
      double g = gamma[size_t(oc)], be = beta[size_t(oc)];
      const double* zr = z.row(oc).data();
      double* xh = xhat.data() + size_t(oc) * h * w;
      double* rr = r.data() + size_t(oc) * h * w;
      for (int i = 0; i < h * w; ++i) {
        double v = (zr[i] - mu) * inv;
        xh[i] = v;
        double a = g * v + be;
        rr[i] = a > 0 ? a : 0.0;
      }
    }
    if (cache) {
      cache->xhat[size_t(b)] = xhat;
      cache->relu_out[size_t(b)] = r;
    }

    // 2x2 average pool, stride 2 (floor)
    int oh = h / 2, ow = w / 2;
    Tensor pooled({out_c, oh, ow});
    for (int oc = 0; oc < out_c; ++oc) {
      const double* rr = r.data() + size_t(oc) * h * w;
      double* pp = pooled.data() + size_t(oc) * oh * ow;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double* p0 = rr + size_t(2 * oy) * w + 2 * ox;
          pp[size_t(oy) * ow + ox] = 0.25 * (p0[0] + p0[1] + p0[w] + p0[w + 1]);
        }
    }
    x = std::move(pooled);
    c = out_c;
    h = oh;
    w = ow;
  }

  FeatureMap out;
  out.channels = c;
  out.h = h;
  out.w = w;
  out.v = std::move(x.raw());
  return out;
}

void Encoder::backward(const Cache& cache, const FeatureMap& dmap, ParamState& grads) const {
  int c = dmap.channels, h = dmap.h, w = dmap.w;
  Tensor dx({c, h, w}, dmap.v);
  MatRM col, dz, dcol;

  for (int b = cfg_.blocks - 1; b >= 0; --b) {
    const Tensor& r = cache.relu_out[size_t(b)];
    const Tensor& xhat = cache.xhat[size_t(b)];
    const Tensor& x_in = cache.block_in[size_t(b)];
    int in_c = x_in.shape()[0];
    int ih = x_in.shape()[1], iw = x_in.shape()[2];
    int out_c = c;

    // unpool: spread each pooled gradient over its 2x2 cell
    Tensor dr({out_c, ih, iw});
    for (int oc = 0; oc < out_c; ++oc) {
      const double* dp = dx.data() + size_t(oc) * h * w;
      double* dd = dr.data() + size_t(oc) * ih * iw;
      for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox) {
          double g = 0.25 * dp[size_t(oy) * w + ox];
          double* p0 = dd + size_t(2 * oy) * iw + 2 * ox;
          p0[0] += g;
          p0[1] += g;
          p0[iw] += g;
          p0[iw + 1] += g;
        }
    }

    // ReLU mask, then norm affine backward
    const Tensor& gamma = params_.at(bname(b, "gamma"));
    const Tensor& rv = params_.at(bname(b, "run_var"));
    Tensor& dgamma = grads.at(bname(b, "gamma"));
    Tensor& dbeta = grads.at(bname(b, "beta"));
    dz.resize(out_c, ih * iw);
    for (int oc = 0; oc < out_c; ++oc) {
      const double* rr = r.data() + size_t(oc) * ih * iw;
      const double* xh = xhat.data() + size_t(oc) * ih * iw;
      double* dd = dr.data() + size_t(oc) * ih * iw;
      double inv = 1.0 / std::sqrt(rv[size_t(oc)] + kNormEps);
      double g = gamma[size_t(oc)];
      double dg = 0, db = 0;
      double* dzr = dz.row(oc).data();
      for (int i = 0; i < ih * iw; ++i) {
        double dn = rr[i] > 0 ? dd[i] : 0.0;
        dg += dn * xh[i];
        db += dn;
        dzr[i] = dn * g * inv;
      }
      dgamma[size_t(oc)] += dg;
      dbeta[size_t(oc)] += db;
    }

    // conv backward
    const Tensor& W = params_.at(bname(b, "conv_w"));
    Tensor& dW = grads.at(bname(b, "conv_w"));
    Tensor& dB = grads.at(bname(b, "conv_b"));
    im2col3(x_in.data(), in_c, ih, iw, col);
    CMapRM Wm(W.data(), out_c, in_c * 9);
    MapRM dWm(dW.data(), out_c, in_c * 9);
    dWm.noalias() += dz * col.transpose();
    for (int oc = 0; oc < out_c; ++oc) dB[size_t(oc)] += dz.row(oc).sum();

    dcol.noalias() = Wm.transpose() * dz;
    Tensor dxin({in_c, ih, iw});
    col2im3(dcol, in_c, ih, iw, dxin.data());
    dx = std::move(dxin);
    c = in_c;
    h = ih;
    w = iw;
  }
}

Embedding pool(const FeatureMap& map) {
  Embedding e;
  e.v.assign(size_t(map.channels), 0.0);
  double inv = 1.0 / (map.h * map.w);
  for (int d = 0; d < map.channels; ++d) {
    double s = 0;
    const double* p = map.v.data() + size_t(d) * map.h * map.w;
    for (int i = 0; i < map.h * map.w; ++i) s += p[i];
    e.v[size_t(d)] = s * inv;
  }
  return e;
}

FeatureMap pool_backward(const std::vector<double>& dembed, const FeatureMap& map) {
  FeatureMap d;
  d.channels = map.channels;
  d.h = map.h;
  d.w = map.w;
  d.v.assign(map.v.size(), 0.0);
  double inv = 1.0 / (map.h * map.w);
  for (int c = 0; c < map.channels; ++c) {
    double g = dembed[size_t(c)] * inv;
    double* p = d.v.data() + size_t(c) * map.h * map.w;
    for (int i = 0; i < map.h * map.w; ++i) p[i] = g;
  }
  return d;
}

}  // namespace st
