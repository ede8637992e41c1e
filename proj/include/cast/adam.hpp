#pragma once

// Adam with bias correction. Moment state is keyed by parameter name and
// sized at construction, so the optimizer must be rebuilt whenever the
// parameter set changes (which the training protocol does on purpose at
// every phase boundary, resetting the moments).

#include "cast/common.hpp"
#include "cast/nn.hpp"

#include <cmath>
#include <map>
#include <string>

namespace cast::nn {

template <class S>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(const ParamStore<S>& ps) {
    ps.for_each([&](const std::string& name, const Tensor<S>& t) {
      Slot& s = slots_[name];
      s.m = Mat<S>::Zero(t.rows(), t.cols());
      s.v = Mat<S>::Zero(t.rows(), t.cols());
    });
  }

  // Per-group learning-rate multiplier by name prefix; later calls win on
  // longer prefixes because all matching prefixes are multiplied in order.
  void set_lr_scale(const std::string& prefix, double scale) { lr_scales_[prefix] = scale; }

  long step_count() const { return t_; }

  void step(ParamStore<S>& ps, double lr) {
    require(lr > 0.0, Err::invalid_argument, "adam: lr must be positive");
    ++t_;
    double c1 = 1.0 - std::pow(beta1, double(t_));
    double c2 = 1.0 - std::pow(beta2, double(t_));
    ps.for_each([&](const std::string& name, Tensor<S>& t) {
      auto it = slots_.find(name);
      require(it != slots_.end(), Err::index, "adam: no state for parameter '" + name + "'");
      Slot& s = it->second;
      s.m = S(beta1) * s.m + S(1.0 - beta1) * t.grad;
      s.v = S(beta2) * s.v.array() + S(1.0 - beta2) * t.grad.array().square();
      double eff = lr * scale_for(name);
      t.value.array() -=
          S(eff) * (s.m.array() / S(c1)) / ((s.v.array() / S(c2)).sqrt() + S(eps));
    });
  }

 private:
  struct Slot {
    Mat<S> m, v;
  };

  double scale_for(const std::string& name) const {
    double s = 1.0;
    for (const auto& [prefix, scale] : lr_scales_)
      if (name.rfind(prefix, 0) == 0) s *= scale;
    return s;
  }

  std::map<std::string, Slot> slots_;
  std::map<std::string, double> lr_scales_;
  long t_ = 0;
};

}  // namespace cast::nn
