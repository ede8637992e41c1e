#pragma once

// Per-channel reconstruction quality and group roll-ups.
//
// Windows are z-scored independently, so correlation is computed per window
// and averaged per channel; pooling samples across window boundaries first
// would correlate the seams, not the signal. R^2 and RMSE pool over all test
// samples of the channel. A channel counts as a success at r > 0.3 and as
// observable at r >= 0.15; a subject with at least 10 observable channels is
// viable. Raw R^2 can go negative; tables floor it at zero while the raw
// value stays available for machine consumers.

#include "cast/common.hpp"
#include "cast/recording.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace cast {

inline constexpr double kSuccessR = 0.3;
inline constexpr double kObservableR = 0.15;
inline constexpr int kViableObservable = 10;

struct ChannelMetrics {
  std::string channel;
  std::string subject;
  std::string region;
  Depth depth = Depth::unknown;
  double r = 0.0;
  double r2_raw = 0.0;
  double r2 = 0.0;  // floored at 0 for tables
  double rmse = 0.0;
  int n_windows = 0;
  bool success = false;
  bool observable = false;
};

// Mean over rows of the per-row Pearson correlation; rows where either side
// has (numerically) zero variance contribute r = 0.
template <class S>
double mean_row_pearson(const Mat<S>& pred, const Mat<S>& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          Err::dimension_mismatch, "pearson: shape mismatch");
  require(pred.rows() > 0 && pred.cols() > 1, Err::invalid_argument,
          "pearson: need at least one row of length >= 2");
  double acc = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) {
    Vecd a = pred.row(i).template cast<double>().transpose();
    Vecd b = target.row(i).template cast<double>().transpose();
    a.array() -= a.mean();
    b.array() -= b.mean();
    double den = a.norm() * b.norm();
    acc += den > 1e-30 ? a.dot(b) / den : 0.0;
  }
  return acc / double(pred.rows());
}

// pred/target stacked one window per row.
template <class S>
ChannelMetrics channel_metrics(const Mat<S>& pred, const Mat<S>& target) {
  require(pred.rows() >= 1, Err::empty_result, "metrics: no test windows");
  ChannelMetrics m;
  m.n_windows = int(pred.rows());
  m.r = mean_row_pearson(pred, target);

  Matd p = pred.template cast<double>(), t = target.template cast<double>();
  double n = double(t.size());
  double sse = (p - t).squaredNorm();
  double tbar = t.mean();
  double sst = (t.array() - tbar).square().sum();
  if (sst < 1e-30)
    m.r2_raw = sse < 1e-30 ? 1.0 : 0.0;
  else
    m.r2_raw = 1.0 - sse / sst;
  m.r2 = std::max(0.0, m.r2_raw);
  m.rmse = std::sqrt(sse / n);
  m.success = m.r > kSuccessR;
  m.observable = m.r >= kObservableR;
  return m;
}

enum class GroupBy { subject, region, depth };

struct GroupSummary {
  std::string key;
  int n = 0;
  int n_success = 0;
  int n_observable = 0;
  double mean_r = 0.0;
  double sd_r = 0.0;
  double mean_r2 = 0.0;
  double sd_r2 = 0.0;
  double success_rate = 0.0;
  bool viable = false;  // n_observable >= 10; meaningful per subject
};

inline std::vector<GroupSummary> aggregate(const std::vector<ChannelMetrics>& metrics,
                                           GroupBy by) {
  require(!metrics.empty(), Err::empty_result, "aggregate: no channel metrics");
  std::map<std::string, std::vector<const ChannelMetrics*>> groups;
  for (const auto& m : metrics) {
    std::string key = by == GroupBy::subject ? m.subject
                      : by == GroupBy::region ? m.region
                                              : std::string(to_string(m.depth));
    groups[key].push_back(&m);
  }
  std::vector<GroupSummary> out;
  for (const auto& [key, members] : groups) {
    GroupSummary g;
    g.key = key;
    g.n = int(members.size());
    for (const auto* m : members) {
      g.mean_r += m->r;
      g.mean_r2 += m->r2;
      g.n_success += m->success;
      g.n_observable += m->observable;
    }
    g.mean_r /= g.n;
    g.mean_r2 /= g.n;
    for (const auto* m : members) {
      g.sd_r += (m->r - g.mean_r) * (m->r - g.mean_r);
      g.sd_r2 += (m->r2 - g.mean_r2) * (m->r2 - g.mean_r2);
    }
    g.sd_r = std::sqrt(g.sd_r / g.n);
    g.sd_r2 = std::sqrt(g.sd_r2 / g.n);
    g.success_rate = double(g.n_success) / g.n;
    g.viable = g.n_observable >= kViableObservable;
    out.push_back(std::move(g));
  }
  if (by == GroupBy::region) {
    std::stable_sort(out.begin(), out.end(),
                     [](const GroupSummary& a, const GroupSummary& b) {
                       return a.mean_r > b.mean_r;
                     });
  } else if (by == GroupBy::depth) {
    auto rank = [](const std::string& k) {
      if (k == "cortical") return 0;
      if (k == "mid") return 1;
      if (k == "deep") return 2;
      return 3;
    };
    std::stable_sort(out.begin(), out.end(),
                     [&](const GroupSummary& a, const GroupSummary& b) {
                       return rank(a.key) < rank(b.key);
                     });
  }
  return out;
}

}  // namespace cast
