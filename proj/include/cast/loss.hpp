#pragma once

// Training objective: mean squared error, plus a correlation term
// (1 - mean per-row Pearson r), plus a spectral term comparing one-sided
// log magnitude spectra. Every term is a mean, so the value is invariant
// to batch size and the gradient of a batch is the mean of per-row
// gradients. Each function optionally writes d(term)/d(pred).
//
// The spectral forward runs through a real FFT; its backward applies the
// exact inverse-transform weights as two dense GEMMs against cached
// cos/sin tables, which keeps the whole term differentiable without
// differentiating through the FFT library.

#include "cast/common.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <map>
#include <utility>
#include <vector>

namespace cast {

struct LossWeights {
  double mse = 1.0;
  double pearson = 1.0;
  double spectral = 0.1;
};

struct LossBreakdown {
  double mse = 0.0;
  double pearson = 0.0;
  double spectral = 0.0;
  double total = 0.0;
};

// Floor inside the log. It must be large enough to bound the 1/(|F|+eps)
// gradient factor on near-silent bins: a tiny floor turns those bins into
// gradient spikes that inflate Adam's second-moment estimates and stall
// whole-model training. 0.1 is ~0.5% of a typical in-band magnitude here.
inline constexpr double kSpectralEps = 1e-1;

namespace detail {

template <class S>
void require_same_shape(const Mat<S>& a, const Mat<S>& b, const char* who) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Err::shape,
          std::string(who) + ": pred and target shapes differ");
  require(a.rows() >= 1 && a.cols() >= 2, Err::shape,
          std::string(who) + ": need at least one row of >= 2 samples");
}

}  // namespace detail

template <class S>
double mse_loss(const Mat<S>& pred, const Mat<S>& target, Mat<S>* grad = nullptr) {
  detail::require_same_shape(pred, target, "mse_loss");
  Mat<S> diff = pred - target;
  double loss = double(diff.array().square().sum()) / double(diff.size());
  if (grad) *grad = (S(2.0 / double(diff.size())) * diff.array()).matrix();
  return loss;
}

// 1 - mean over rows of Pearson r between pred row and target row.
// Zero-variance rows contribute r = 0 and a zero gradient.
template <class S>
double pearson_loss(const Mat<S>& pred, const Mat<S>& target, Mat<S>* grad = nullptr) {
  detail::require_same_shape(pred, target, "pearson_loss");
  Index rows = pred.rows(), n = pred.cols();
  if (grad) grad->setZero(rows, n);
  double r_sum = 0.0;
  Vecd pc(n), tc(n);
  for (Index r = 0; r < rows; ++r) {
    pc = pred.row(r).template cast<double>();
    tc = target.row(r).template cast<double>();
    pc.array() -= pc.mean();
    tc.array() -= tc.mean();
    double sp = pc.squaredNorm(), st = tc.squaredNorm();
    if (sp < 1e-24 || st < 1e-24) continue;  // r := 0
    double spt = pc.dot(tc);
    double denom = std::sqrt(sp * st);
    r_sum += spt / denom;
    if (grad) {
      // d r / d pred_i, with the centering projector folded in.
      Vecd g = (tc - (spt / sp) * pc) / denom;
      grad->row(r) = (-1.0 / double(rows)) * g.template cast<S>().transpose();
    }
  }
  return 1.0 - r_sum / double(rows);
}

// One-sided spectra of each row, [rows x (n/2 + 1)].
template <class S>
Mat<std::complex<S>> rfft_rows(const Mat<S>& x) {
  require(x.cols() >= 2, Err::invalid_argument, "rfft_rows: need at least 2 samples");
  static thread_local Eigen::FFT<S> fft;
  fft.SetFlag(Eigen::FFT<S>::HalfSpectrum);
  Index n = x.cols(), k = n / 2 + 1;
  Mat<std::complex<S>> out(x.rows(), k);
  std::vector<S> in(static_cast<size_t>(n));
  std::vector<std::complex<S>> spec;
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index i = 0; i < n; ++i) in[size_t(i)] = x(r, i);
    fft.fwd(spec, in);
    for (Index i = 0; i < k; ++i) out(r, i) = spec[size_t(i)];
  }
  return out;
}

namespace detail {

// cos/sin of 2*pi*k*t/n, shape [k x n]; cached per length.
template <class S>
const std::pair<Mat<S>, Mat<S>>& inverse_dft_tables(Index n) {
  static thread_local std::map<Index, std::pair<Mat<S>, Mat<S>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Index k = n / 2 + 1;
  Mat<S> ct(k, n), st(k, n);
  for (Index ki = 0; ki < k; ++ki)
    for (Index t = 0; t < n; ++t) {
      double ang = 2.0 * M_PI * double(ki) * double(t) / double(n);
      ct(ki, t) = S(std::cos(ang));
      st(ki, t) = S(std::sin(ang));
    }
  return cache.emplace(n, std::make_pair(std::move(ct), std::move(st))).first->second;
}

}  // namespace detail

template <class S>
double spectral_loss(const Mat<S>& pred, const Mat<S>& target, Mat<S>* grad = nullptr,
                     double eps = kSpectralEps) {
  detail::require_same_shape(pred, target, "spectral_loss");
  Index rows = pred.rows(), n = pred.cols(), k = n / 2 + 1;

  Mat<std::complex<S>> fp = rfft_rows(pred);
  Mat<std::complex<S>> ft = rfft_rows(target);

  double loss = 0.0;
  Mat<S> c_re, c_im;
  if (grad) {
    c_re.setZero(rows, k);
    c_im.setZero(rows, k);
  }
  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < k; ++j) {
      double mp = std::abs(std::complex<double>(fp(r, j)));
      double mt = std::abs(std::complex<double>(ft(r, j)));
      double l = std::log(mp + eps) - std::log(mt + eps);
      loss += l * l;
      if (grad && mp > 1e-30) {
        // d loss / d |F| times the unit phase of F.
        double g = 2.0 * l / (double(rows * k) * (mp + eps));
        c_re(r, j) = S(g * double(fp(r, j).real()) / mp);
        c_im(r, j) = S(g * double(fp(r, j).imag()) / mp);
      }
    }
  }
  loss /= double(rows * k);

  if (grad) {
    const auto& [ct, st] = detail::inverse_dft_tables<S>(n);
    grad->resize(rows, n);
    grad->noalias() = c_re * ct;
    grad->noalias() -= c_im * st;
  }
  return loss;
}

template <class S>
LossBreakdown composite_loss(const Mat<S>& pred, const Mat<S>& target, const LossWeights& w,
                             Mat<S>* grad = nullptr) {
  detail::require_same_shape(pred, target, "composite_loss");
  LossBreakdown out;
  if (grad) grad->setZero(pred.rows(), pred.cols());
  Mat<S> g;
  if (w.mse != 0.0) {
    out.mse = mse_loss(pred, target, grad ? &g : nullptr);
    if (grad) *grad += S(w.mse) * g;
  }
  if (w.pearson != 0.0) {
    out.pearson = pearson_loss(pred, target, grad ? &g : nullptr);
    if (grad) *grad += S(w.pearson) * g;
  }
  if (w.spectral != 0.0) {
    out.spectral = spectral_loss(pred, target, grad ? &g : nullptr);
    if (grad) *grad += S(w.spectral) * g;
  }
  out.total = w.mse * out.mse + w.pearson * out.pearson + w.spectral * out.spectral;
  return out;
}

}  // namespace cast
