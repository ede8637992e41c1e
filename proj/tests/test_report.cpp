#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cast/report.hpp"

#include <cmath>

using namespace cast;

namespace {

ChannelMetrics cm(const std::string& subject, const std::string& channel, Depth depth, double r,
                  bool observable) {
  ChannelMetrics m;
  m.subject = subject;
  m.channel = channel;
  m.region = depth == Depth::cortical ? "lateral" : "mesial";
  m.depth = depth;
  m.r = r;
  m.r2_raw = r * r;
  m.r2 = r * r;
  m.rmse = 1.0 - r;
  m.n_windows = 40;
  m.success = r > kSuccessR;
  m.observable = observable;
  return m;
}

LosoReport two_fold_report() {
  LosoReport rep;
  FoldReport f1;
  f1.test_subject = "s1";
  f1.metrics_all = {cm("s1", "A", Depth::cortical, 0.6, true), cm("s1", "B", Depth::deep, 0.0, false)};
  f1.metrics_obs = {cm("s1", "A", Depth::cortical, 0.7, true)};
  f1.phaseB.trained = true;
  f1.phaseB.observable = {"A"};
  FoldReport f2;
  f2.test_subject = "s2";
  f2.metrics_all = {cm("s2", "C", Depth::cortical, 0.4, true), cm("s2", "D", Depth::mid, 0.2, true)};
  f2.metrics_obs = {cm("s2", "C", Depth::cortical, 0.5, true), cm("s2", "D", Depth::mid, 0.3, true)};
  f2.phaseB.trained = true;
  f2.phaseB.observable = {"C", "D"};
  rep.folds = {f1, f2};
  return rep;
}

}  // namespace

TEST_CASE("channel metrics survive a json round trip") {
  ChannelMetrics m = cm("s7", "HIP3", Depth::deep, -0.12, false);
  m.region = "mesial";
  ChannelMetrics back = report::channel_metrics_from_json(report::to_json(m));
  CHECK(back.channel == m.channel);
  CHECK(back.subject == m.subject);
  CHECK(back.region == m.region);
  CHECK(back.depth == m.depth);
  CHECK(back.r == m.r);
  CHECK(back.r2_raw == m.r2_raw);
  CHECK(back.rmse == m.rmse);
  CHECK(back.n_windows == m.n_windows);
  CHECK(back.success == m.success);
  CHECK(back.observable == m.observable);

  json arr = report::to_json(std::vector<ChannelMetrics>{m, m});
  CHECK(report::channel_metrics_list_from_json(arr).size() == 2);
  CHECK_THROWS_AS(report::channel_metrics_list_from_json(json::object()), Error);
}

TEST_CASE("non-finite curve values become json null and empty csv cells") {
  EpochStats e;
  e.epoch = 3;
  e.total = 1.5;
  json j = report::to_json(e);
  CHECK(j["calib_r"].is_null());
  CHECK(j["total"].get<double>() == 1.5);

  std::string csv = report::curve_csv({e});
  CHECK(csv.find("3,0,0,0,1.5,\n") != std::string::npos);

  e.calib_r = 0.25;
  CHECK(report::to_json(e)["calib_r"].get<double>() == 0.25);
  CHECK(report::curve_csv({e}).find(",0.25\n") != std::string::npos);
}

TEST_CASE("obs benefit pools channels over non-excluded folds") {
  LosoReport rep = two_fold_report();
  report::ObsBenefit b = report::obs_benefit(rep);
  CHECK(b.n_all == 4);
  CHECK(b.n_obs == 3);
  CHECK(b.folds_with_obs == 2);
  CHECK(b.mean_r_all == doctest::Approx(0.3));
  CHECK(b.mean_r_obs == doctest::Approx(0.5));
  CHECK(b.delta == doctest::Approx(0.2));

  FoldReport skipped;
  skipped.test_subject = "s3";
  skipped.excluded = true;
  skipped.metrics_all = {cm("s3", "X", Depth::cortical, 0.99, true)};
  rep.folds.push_back(skipped);
  report::ObsBenefit b2 = report::obs_benefit(rep);
  CHECK(b2.n_all == 4);  // excluded fold contributes nothing
}

TEST_CASE("loso summary json carries pooled aggregates and the gradient status") {
  LosoReport rep = two_fold_report();
  json j = report::loso_summary_json(rep);
  CHECK(j["folds"].size() == 2);
  CHECK(j["pooled_all"]["n_channels"].get<int>() == 4);
  CHECK(j["pooled_obs"]["n_channels"].get<int>() == 3);
  CHECK(j["obs_benefit"]["delta"].get<double>() == doctest::Approx(0.2));
  CHECK(j["pooled_all"]["by_depth"].is_array());

  // two subjects but only fold 1 has a deep contact; the lmm is fittable
  CHECK(j["depth_gradient"].contains("verdict"));
}

TEST_CASE("depth gradient json degrades to a status object on degenerate input") {
  // single subject: grouping is degenerate, the report must not throw
  std::vector<ChannelMetrics> ms = {cm("only", "A", Depth::cortical, 0.5, true),
                                    cm("only", "B", Depth::deep, 0.1, false)};
  json j = report::depth_gradient_json(ms);
  CHECK(j["testable"].get<bool>() == false);
  CHECK(j["verdict"].get<std::string>().find("untestable") == 0);
}

TEST_CASE("csv and tables render every channel row") {
  LosoReport rep = two_fold_report();
  std::vector<ChannelMetrics> all = report::pooled_all(rep);

  std::string csv = report::channel_csv(all);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 rows
  CHECK(csv.find("s1,A,lateral,cortical,0.6,") != std::string::npos);
  CHECK(csv.rfind("subject,channel,region,depth,", 0) == 0);

  std::string table = report::channel_table(all);
  CHECK(table.find("HIP") == std::string::npos);
  CHECK(table.find("s2") != std::string::npos);

  std::string text = report::loso_text(rep);
  CHECK(text.find("ALL channels") != std::string::npos);
  CHECK(text.find("OBS channels") != std::string::npos);
  CHECK(text.find("depth gradient:") != std::string::npos);
}

TEST_CASE("content hash is stable and input sensitive") {
  std::string a = report::hash_hex12("run-config-a");
  CHECK(a == report::hash_hex12("run-config-a"));
  CHECK(a != report::hash_hex12("run-config-b"));
  CHECK(a.size() == 12);
}
