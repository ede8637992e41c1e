#pragma once

// Random-intercept linear mixed model for the depth-gradient test:
//
//   y_ij = b0 + b1*[mid] + b2*[deep] + u_i + e_ij,
//   u_i ~ N(0, sigma_u^2), e_ij ~ N(0, sigma_e^2), groups i = subjects.
//
// Maximum likelihood with beta and sigma_e^2 profiled out in closed form;
// the remaining 1-D problem in the variance ratio lambda = sigma_u^2 /
// sigma_e^2 is solved by golden-section search on log lambda. The grouped
// covariance (I + lambda * 1 1^T) inverts via Sherman-Morrison, so one
// likelihood evaluation costs O(n p^2) with no dense n x n algebra.
// Standard errors are Wald (GLS information at the optimum), p-values from
// the two-sided normal approximation. Reference depth category: cortical.

#include "cast/common.hpp"
#include "cast/metrics.hpp"
#include "cast/recording.hpp"
#include "cast/rng.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace cast {

struct LmmFit {
  // slot order: intercept, mid, deep; absent levels are flagged inestimable
  std::array<double, 3> beta{}, se{}, t{}, p{};
  std::array<bool, 3> estimable{};
  double sigma_u2 = 0.0;
  double sigma_e2 = 0.0;
  double lambda = 0.0;
  double loglik = 0.0;
  int n_obs = 0;
  int n_groups = 0;
};

namespace detail {

struct LmmWork {
  Matd xtx;            // [p x p]
  Vecd xty;            // [p]
  double yty = 0.0;
  Matd group_sx;       // [g x p], per-group column sums of X
  Vecd group_sy;       // [g]
  Vecd group_n;        // [g]
  Index n = 0, p = 0;
  std::array<int, 3> col_of{};  // slot -> column, -1 when absent
};

inline LmmWork lmm_prepare(const std::vector<double>& y, const std::vector<Depth>& depth,
                           const std::vector<std::string>& subject) {
  size_t n = y.size();
  require(n > 0, Err::empty_result, "lmm: no observations");
  require(depth.size() == n && subject.size() == n, Err::dimension_mismatch,
          "lmm: y, depth, subject lengths differ");

  std::map<std::string, Index> gid;
  std::vector<Index> g(n);
  std::array<Index, 3> level_count{};
  for (size_t i = 0; i < n; ++i) {
    require(std::isfinite(y[i]), Err::numeric, "lmm: non-finite observation");
    int slot = depth[i] == Depth::cortical ? 0
               : depth[i] == Depth::mid    ? 1
               : depth[i] == Depth::deep   ? 2
                                           : -1;
    require(slot >= 0, Err::invalid_argument, "lmm: depth label missing");
    ++level_count[size_t(slot)];
    auto [it, fresh] = gid.emplace(subject[i], Index(gid.size()));
    g[i] = it->second;
  }
  require(gid.size() >= 2, Err::grouping, "lmm: need at least two subjects");
  int n_levels = (level_count[0] > 0) + (level_count[1] > 0) + (level_count[2] > 0);
  require(n_levels >= 2, Err::design_rank, "lmm: single depth level; gradient untestable");
  require(level_count[0] > 0, Err::design_rank,
          "lmm: reference level (cortical) absent; gradient untestable");

  LmmWork w;
  w.n = Index(n);
  w.col_of = {0, -1, -1};
  Index p = 1;
  if (level_count[1] > 0) w.col_of[1] = p++;
  if (level_count[2] > 0) w.col_of[2] = p++;
  w.p = p;
  require(w.n >= w.p + 2, Err::insufficient_data, "lmm: too few observations");

  Matd X = Matd::Zero(w.n, p);
  X.col(0).setOnes();
  for (size_t i = 0; i < n; ++i) {
    if (depth[i] == Depth::mid) X(Index(i), w.col_of[1]) = 1.0;
    if (depth[i] == Depth::deep) X(Index(i), w.col_of[2]) = 1.0;
  }
  Index ng = Index(gid.size());
  w.xtx = X.transpose() * X;
  w.xty.setZero(p);
  w.group_sx = Matd::Zero(ng, p);
  w.group_sy = Vecd::Zero(ng);
  w.group_n = Vecd::Zero(ng);
  for (size_t i = 0; i < n; ++i) {
    w.xty += X.row(Index(i)).transpose() * y[i];
    w.yty += y[i] * y[i];
    w.group_sx.row(g[i]) += X.row(Index(i));
    w.group_sy[g[i]] += y[i];
    w.group_n[g[i]] += 1.0;
  }
  return w;
}

struct LmmProfile {
  Vecd beta;
  Matd info_inv;  // (X^T W X)^{-1}
  double sigma_e2 = 0.0;
  double loglik = 0.0;
};

// Profile likelihood at a fixed variance ratio lambda.
inline LmmProfile lmm_profile(const LmmWork& w, double lambda) {
  Matd A = w.xtx;
  Vecd b = w.xty;
  double ywy = w.yty;
  double logdet = 0.0;
  for (Index i = 0; i < w.group_n.size(); ++i) {
    double ni = w.group_n[i];
    double c = lambda / (1.0 + lambda * ni);
    A.noalias() -= c * w.group_sx.row(i).transpose() * w.group_sx.row(i);
    b -= c * w.group_sx.row(i).transpose() * w.group_sy[i];
    ywy -= c * w.group_sy[i] * w.group_sy[i];
    logdet += std::log1p(lambda * ni);
  }
  Eigen::LLT<Matd> llt(A);
  require(llt.info() == Eigen::Success, Err::design_rank, "lmm: singular design");
  LmmProfile out;
  out.beta = llt.solve(b);
  out.info_inv = llt.solve(Matd::Identity(w.p, w.p));
  double rss = ywy - out.beta.dot(b);
  out.sigma_e2 = std::max(rss / double(w.n), 1e-300);
  out.loglik = -0.5 * (double(w.n) * (std::log(2.0 * M_PI * out.sigma_e2) + 1.0) + logdet);
  return out;
}

}  // namespace detail

inline constexpr double kLmmLambdaLo = 1e-8;
inline constexpr double kLmmLambdaHi = 1e3;
inline constexpr double kLmmTol = 1e-6;

inline LmmFit fit_lmm(const std::vector<double>& y, const std::vector<Depth>& depth,
                      const std::vector<std::string>& subject) {
  detail::LmmWork w = detail::lmm_prepare(y, depth, subject);

  auto nll = [&](double u) { return -detail::lmm_profile(w, std::exp(u)).loglik; };
  double a = std::log(kLmmLambdaLo), b = std::log(kLmmLambdaHi);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = nll(x1), f2 = nll(x2);
  while (b - a > kLmmTol) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = nll(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = nll(x2);
    }
  }
  double lambda = std::exp(0.5 * (a + b));
  detail::LmmProfile opt = detail::lmm_profile(w, lambda);

  LmmFit fit;
  fit.lambda = lambda;
  fit.sigma_e2 = opt.sigma_e2;
  fit.sigma_u2 = lambda * opt.sigma_e2;
  fit.loglik = opt.loglik;
  fit.n_obs = int(w.n);
  fit.n_groups = int(w.group_n.size());
  double nan = std::numeric_limits<double>::quiet_NaN();
  fit.beta = {nan, nan, nan};
  fit.se = {nan, nan, nan};
  fit.t = {nan, nan, nan};
  fit.p = {nan, nan, nan};
  for (int slot = 0; slot < 3; ++slot) {
    int col = w.col_of[size_t(slot)];
    if (col < 0) continue;
    fit.estimable[size_t(slot)] = true;
    fit.beta[size_t(slot)] = opt.beta[col];
    fit.se[size_t(slot)] = std::sqrt(opt.sigma_e2 * opt.info_inv(col, col));
    fit.t[size_t(slot)] = fit.beta[size_t(slot)] / fit.se[size_t(slot)];
    fit.p[size_t(slot)] = std::erfc(std::abs(fit.t[size_t(slot)]) / std::numbers::sqrt2);
  }
  return fit;
}

struct DepthGradientReport {
  std::vector<GroupSummary> per_depth;
  LmmFit fit;
  bool testable = false;
  bool significant = false;  // p_deep < 0.05
  std::string verdict;
};

inline DepthGradientReport depth_gradient_report(const std::vector<ChannelMetrics>& metrics) {
  require(!metrics.empty(), Err::empty_result, "depth gradient: no metrics");
  std::vector<double> y;
  std::vector<Depth> depth;
  std::vector<std::string> subject;
  for (const auto& m : metrics) {
    y.push_back(m.r);
    depth.push_back(m.depth);
    subject.push_back(m.subject);
  }
  DepthGradientReport rep;
  rep.per_depth = aggregate(metrics, GroupBy::depth);
  rep.fit = fit_lmm(y, depth, subject);
  if (!rep.fit.estimable[2]) {
    rep.verdict = "deep level absent; gradient untestable";
    return rep;
  }
  rep.testable = true;
  rep.significant = rep.fit.p[2] < 0.05;
  char buf[160];
  std::snprintf(buf, sizeof buf, "beta_deep = %+.4f (t = %+.2f, p = %.4g): %s",
                rep.fit.beta[2], rep.fit.t[2], rep.fit.p[2],
                rep.significant ? "significant depth gradient at alpha = 0.05"
                                : "no significant depth gradient at alpha = 0.05");
  rep.verdict = buf;
  return rep;
}

// Null-calibration helper: p-values of the deep coefficient under uniform
// relabelings of depth. Label counts are preserved by construction, so every
// permutation keeps the design estimable.
inline std::vector<double> lmm_permutation_p(const std::vector<double>& y,
                                             std::vector<Depth> depth,
                                             const std::vector<std::string>& subject,
                                             int n_perm, Rng rng) {
  require(n_perm >= 1, Err::invalid_argument, "lmm permutation: n_perm must be positive");
  std::vector<double> out;
  out.reserve(size_t(n_perm));
  for (int k = 0; k < n_perm; ++k) {
    Rng pr = rng.stream("perm", uint64_t(k));
    pr.shuffle(depth);
    out.push_back(fit_lmm(y, depth, subject).p[2]);
  }
  return out;
}

}  // namespace cast
