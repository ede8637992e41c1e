#pragma once

// Independent reference implementations used only by tests: slow, obvious
// versions of everything the library computes cleverly, plus a central
// finite-difference gradient checker.

#include "cast/common.hpp"
#include "cast/nn.hpp"
#include "cast/rng.hpp"

#include <complex>
#include <string>
#include <vector>

namespace oracle {

using cast::Index;
using cast::Matd;
using cast::Vecd;

// O(n^2) discrete Fourier transform, one-sided (n/2 + 1 bins).
inline std::vector<std::complex<double>> direct_rdft(const Vecd& x) {
  Index n = x.size();
  std::vector<std::complex<double>> out(size_t(n / 2 + 1));
  for (Index k = 0; k <= n / 2; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (Index t = 0; t < n; ++t) {
      double ang = -2.0 * M_PI * double(k) * double(t) / double(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[size_t(k)] = acc;
  }
  return out;
}

// Two-pass textbook Pearson correlation.
inline double pearson(const Vecd& a, const Vecd& b) {
  double ma = a.mean(), mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst = "";
  int n_checked = 0;

  void absorb(const std::string& name, double analytic, double numeric) {
    double e = rel_err(analytic, numeric);
    ++n_checked;
    if (e > max_rel_err) {
      max_rel_err = e;
      worst = name;
    }
  }
};

// Central difference d loss / d x for one coordinate held in `slot`.
template <class S, class LossFn>
double central_diff(LossFn&& loss, S& slot, double h) {
  S keep = slot;
  slot = S(double(keep) + h);
  double up = loss();
  slot = S(double(keep) - h);
  double down = loss();
  slot = keep;
  return (up - down) / (2.0 * h);
}

// Compares store gradients (filled by the caller's backward pass) against
// finite differences of `loss` at sampled coordinates of every parameter.
template <class S, class LossFn>
GradCheck check_param_gradients(cast::nn::ParamStore<S>& ps, LossFn&& loss, cast::Rng rng,
                                int coords_per_tensor, double h = 1e-5) {
  GradCheck out;
  ps.for_each([&](const std::string& name, cast::nn::Tensor<S>& t) {
    for (int c = 0; c < coords_per_tensor; ++c) {
      Index i = Index(rng.uniform_int(0, t.size() - 1));
      double numeric = central_diff(loss, t.value.data()[i], h);
      out.absorb(name + "[" + std::to_string(i) + "]", double(t.grad.data()[i]), numeric);
    }
  });
  return out;
}

// Same for an input matrix and its analytic gradient.
template <class S, class LossFn>
GradCheck check_matrix_gradient(cast::Mat<S>& x, const cast::Mat<S>& dx, LossFn&& loss,
                                cast::Rng rng, int coords, double h = 1e-5) {
  GradCheck out;
  for (int c = 0; c < coords; ++c) {
    Index i = Index(rng.uniform_int(0, x.size() - 1));
    double numeric = central_diff(loss, x.data()[i], h);
    out.absorb("x[" + std::to_string(i) + "]", double(dx.data()[i]), numeric);
  }
  return out;
}

}  // namespace oracle
