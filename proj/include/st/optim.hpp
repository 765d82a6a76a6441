#pragma once

#include "st/backbone.hpp"

namespace st {

// SGD with momentum over a ParamState. Non-trainable entries (running
// stats) are skipped.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(ParamState& params, const ParamState& grads);

 private:
  double lr_, momentum_;
  ParamState velocity_;
  bool initialized_ = false;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamState& params, const ParamState& grads);

  long t() const { return t_; }
  // Moment tensors for checkpointing ("m." / "v." prefixed).
  ParamState export_state() const;
  void import_state(const ParamState& state, long t);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ParamState m_, v_;
  bool initialized_ = false;
};

}  // namespace st
