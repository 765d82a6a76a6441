#include "st/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace st {

void SgdMomentum::step(ParamState& params, const ParamState& grads) {
  if (!initialized_) {
    velocity_ = ParamState::zeros_like(params);
    initialized_ = true;
  }
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entries()[i];
    if (!p.trainable) continue;
    const Tensor& g = grads.at(p.name);
    Tensor& vel = velocity_.entries()[i].value;
    for (long j = 0; j < p.value.numel(); ++j) {
      vel[size_t(j)] = momentum_ * vel[size_t(j)] + g[size_t(j)];
      p.value[size_t(j)] -= lr_ * vel[size_t(j)];
    }
  }
}

void Adam::step(ParamState& params, const ParamState& grads) {
  if (!initialized_) {
    m_ = ParamState::zeros_like(params);
    v_ = ParamState::zeros_like(params);
    initialized_ = true;
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entries()[i];
    if (!p.trainable) continue;
    const Tensor& g = grads.at(p.name);
    Tensor& m = m_.entries()[i].value;
    Tensor& v = v_.entries()[i].value;
    for (long j = 0; j < p.value.numel(); ++j) {
      double gj = g[size_t(j)];
      m[size_t(j)] = beta1_ * m[size_t(j)] + (1 - beta1_) * gj;
      v[size_t(j)] = beta2_ * v[size_t(j)] + (1 - beta2_) * gj * gj;
      double mhat = m[size_t(j)] / bc1;
      double vhat = v[size_t(j)] / bc2;
      p.value[size_t(j)] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

ParamState Adam::export_state() const {
  ParamState out;
  if (!initialized_) return out;
  out.merge(m_, "m.");
  out.merge(v_, "v.");
  return out;
}

void Adam::import_state(const ParamState& state, long t) {
  m_ = ParamState();
  v_ = ParamState();
  for (const auto& e : state.entries()) {
    if (e.name.rfind("m.", 0) == 0) m_.add(e.name.substr(2), e.value, e.trainable);
    else if (e.name.rfind("v.", 0) == 0) v_.add(e.name.substr(2), e.value, e.trainable);
    else throw std::runtime_error("Adam::import_state: unexpected entry " + e.name);
  }
  t_ = t;
  initialized_ = m_.size() > 0;
}

}  // namespace st
