#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cast/metrics.hpp"
#include "cast/rng.hpp"
#include "oracles.hpp"

using namespace cast;

static Matd random_windows(Index n_w, Index len, uint64_t seed) {
  Rng rng(seed);
  Matd m(n_w, len);
  for (Index i = 0; i < n_w; ++i)
    for (Index j = 0; j < len; ++j) m(i, j) = rng.normal();
  return m;
}

static Matd zscore_each_row(Matd m) {
  for (Index i = 0; i < m.rows(); ++i) {
    m.row(i).array() -= m.row(i).mean();
    m.row(i) /= std::sqrt(m.row(i).array().square().mean());
  }
  return m;
}

// rows with per-row correlation exactly c against the target
static Matd correlated_pred(const Matd& target, double c, uint64_t seed) {
  Matd noise = random_windows(target.rows(), target.cols(), seed);
  Matd out(target.rows(), target.cols());
  for (Index i = 0; i < target.rows(); ++i) {
    Vecd t = target.row(i).transpose();
    t.array() -= t.mean();
    t /= t.norm();
    Vecd o = noise.row(i).transpose();
    o.array() -= o.mean();
    o -= o.dot(t) * t;
    o /= o.norm();
    out.row(i) = (c * t + std::sqrt(1.0 - c * c) * o).transpose();
  }
  return out;
}

TEST_CASE("perfect prediction gives r = 1, R2 = 1, rmse = 0") {
  Matd t = zscore_each_row(random_windows(4, 100, 1));
  ChannelMetrics m = channel_metrics(t, t);
  CHECK(m.r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.r2_raw == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.rmse == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.n_windows == 4);
  CHECK(m.success);
  CHECK(m.observable);
}

TEST_CASE("constant prediction against z-scored targets scores zero") {
  Matd t = zscore_each_row(random_windows(5, 200, 2));
  Matd p = Matd::Zero(5, 200);
  ChannelMetrics m = channel_metrics(p, t);
  CHECK(m.r == 0.0);  // zero-variance rule, exactly
  CHECK(std::abs(m.r2_raw) < 1e-9);
  CHECK(m.r2 == 0.0);
  CHECK_FALSE(m.success);
  CHECK_FALSE(m.observable);
}

TEST_CASE("mean per-window r matches the textbook oracle") {
  Matd t = random_windows(5, 64, 3);
  Matd p = random_windows(5, 64, 4);
  ChannelMetrics m = channel_metrics(p, t);
  double want = 0.0;
  for (Index i = 0; i < 5; ++i)
    want += oracle::pearson(p.row(i).transpose(), t.row(i).transpose());
  want /= 5.0;
  CHECK(m.r == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("r is invariant under positive affine transforms of the prediction") {
  Matd t = random_windows(3, 80, 5);
  Matd p = random_windows(3, 80, 6);
  ChannelMetrics a = channel_metrics(p, t);
  Matd q = (2.5 * p.array() + 3.0).matrix();
  ChannelMetrics b = channel_metrics(q, t);
  CHECK(a.r == doctest::Approx(b.r).epsilon(1e-12));
  CHECK(a.success == b.success);
  CHECK(a.observable == b.observable);
}

TEST_CASE("pooled R2 and RMSE satisfy the variance identity") {
  Matd t = zscore_each_row(random_windows(6, 150, 7));
  Matd p = correlated_pred(t, 0.6, 8);
  ChannelMetrics m = channel_metrics(p, t);
  double tbar = t.mean();
  double var_t = (t.array() - tbar).square().mean();
  CHECK(m.r2_raw == doctest::Approx(1.0 - m.rmse * m.rmse / var_t).epsilon(1e-9));
}

TEST_CASE("negative raw R2 is floored for tables but kept raw") {
  Matd t = zscore_each_row(random_windows(3, 120, 9));
  Matd p = -t;
  ChannelMetrics m = channel_metrics(p, t);
  CHECK(m.r2_raw < -2.5);
  CHECK(m.r2 == 0.0);
  CHECK(m.r == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("success and observable thresholds sit at 0.3 and 0.15") {
  Matd t = zscore_each_row(random_windows(8, 400, 10));
  auto r_of = [&](double c) { return channel_metrics(correlated_pred(t, c, 11), t); };
  ChannelMetrics hi = r_of(0.5);
  CHECK(hi.r == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(hi.success);
  CHECK(hi.observable);
  ChannelMetrics mid = r_of(0.2);
  CHECK_FALSE(mid.success);
  CHECK(mid.observable);
  ChannelMetrics lo = r_of(0.1);
  CHECK_FALSE(lo.success);
  CHECK_FALSE(lo.observable);
  ChannelMetrics edge = r_of(0.16);
  CHECK(edge.observable);
  CHECK_FALSE(edge.success);
}

TEST_CASE("channel_metrics validates shapes") {
  Matd t = random_windows(2, 50, 12);
  Matd bad = random_windows(3, 50, 13);
  CHECK_THROWS_AS(channel_metrics(bad, t), Error);
  Matd empty(0, 50);
  CHECK_THROWS_AS(channel_metrics(empty, empty), Error);
}

static ChannelMetrics mk(const std::string& subj, Depth d, const std::string& region,
                         double r, bool observable) {
  ChannelMetrics m;
  m.subject = subj;
  m.depth = d;
  m.region = region;
  m.r = r;
  m.r2 = std::max(0.0, r * r);
  m.success = r > kSuccessR;
  m.observable = observable;
  return m;
}

TEST_CASE("aggregate means, sd, and ordering") {
  std::vector<ChannelMetrics> ms = {
      mk("s1", Depth::cortical, "lateral", 0.2, true),
      mk("s1", Depth::cortical, "lateral", 0.4, true),
      mk("s2", Depth::deep, "mesial", 0.6, true),
  };
  auto by_subject = aggregate(ms, GroupBy::subject);
  REQUIRE(by_subject.size() == 2);
  CHECK(by_subject[0].key == "s1");
  CHECK(by_subject[0].mean_r == doctest::Approx(0.3));
  CHECK(by_subject[0].sd_r == doctest::Approx(0.1));
  CHECK(by_subject[1].mean_r == doctest::Approx(0.6));
  CHECK(by_subject[1].sd_r == doctest::Approx(0.0));

  // regions sort by mean r, best first
  auto by_region = aggregate(ms, GroupBy::region);
  REQUIRE(by_region.size() == 2);
  CHECK(by_region[0].key == "mesial");
  CHECK(by_region[1].key == "lateral");

  // depth keeps anatomical order
  ms.push_back(mk("s2", Depth::mid, "intermediate", 0.5, true));
  auto by_depth = aggregate(ms, GroupBy::depth);
  REQUIRE(by_depth.size() == 3);
  CHECK(by_depth[0].key == "cortical");
  CHECK(by_depth[1].key == "mid");
  CHECK(by_depth[2].key == "deep");

  CHECK_THROWS_AS(aggregate({}, GroupBy::subject), Error);
}

TEST_CASE("viable subject needs at least 10 observable channels") {
  std::vector<ChannelMetrics> ms;
  for (int i = 0; i < 10; ++i) ms.push_back(mk("s1", Depth::cortical, "x", 0.4, true));
  for (int i = 0; i < 9; ++i) ms.push_back(mk("s2", Depth::cortical, "x", 0.4, true));
  for (int i = 0; i < 5; ++i) ms.push_back(mk("s2", Depth::deep, "x", 0.01, false));
  auto groups = aggregate(ms, GroupBy::subject);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].key == "s1");
  CHECK(groups[0].viable);
  CHECK(groups[0].n_observable == 10);
  CHECK_FALSE(groups[1].viable);
  CHECK(groups[1].n_observable == 9);
  CHECK(groups[1].success_rate == doctest::Approx(9.0 / 14.0));
}
