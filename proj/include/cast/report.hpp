#pragma once

// Run artifacts: JSON reports, plot-ready CSV, and fixed-width text tables.
// Serialization is timestamp-free and key-ordered so a repeated run writes
// byte-identical files; non-finite values become JSON null and empty CSV
// cells.

#include "cast/lmm.hpp"
#include "cast/recording_io.hpp"
#include "cast/trainer.hpp"

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace cast::report {

// ---------------------------------------------------------------------------
// small formatting helpers

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string csv_num(double v) {
  if (!std::isfinite(v)) return "";
  return fmt("%.9g", v);
}

inline std::string pad(const std::string& s, size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace detail

// FNV-1a; used to content-address run directories.
inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex12(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return std::string(buf).substr(0, 12);
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  require(f.good(), Err::io, "cannot write '" + path + "'");
  f << content;
  require(f.good(), Err::io, "write failed on '" + path + "'");
}

// ---------------------------------------------------------------------------
// JSON serializers

inline json to_json(const ChannelMetrics& m) {
  json j;
  j["channel"] = m.channel;
  j["subject"] = m.subject;
  j["region"] = m.region;
  j["depth"] = to_string(m.depth);
  j["r"] = m.r;
  j["r2_raw"] = m.r2_raw;
  j["r2"] = m.r2;
  j["rmse"] = m.rmse;
  j["n_windows"] = m.n_windows;
  j["success"] = m.success;
  j["observable"] = m.observable;
  return j;
}

inline json to_json(const std::vector<ChannelMetrics>& v) {
  json j = json::array();
  for (const auto& m : v) j.push_back(to_json(m));
  return j;
}

inline ChannelMetrics channel_metrics_from_json(const json& j) {
  try {
    ChannelMetrics m;
    m.channel = j.at("channel").get<std::string>();
    m.subject = j.at("subject").get<std::string>();
    m.region = j.value("region", std::string());
    m.depth = depth_from_string(j.at("depth").get<std::string>());
    m.r = j.at("r").get<double>();
    m.r2_raw = j.value("r2_raw", 0.0);
    m.r2 = j.value("r2", 0.0);
    m.rmse = j.value("rmse", 0.0);
    m.n_windows = j.value("n_windows", 0);
    m.success = j.value("success", false);
    m.observable = j.value("observable", false);
    return m;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Err::parse, std::string("bad channel metrics entry: ") + e.what());
  }
}

inline std::vector<ChannelMetrics> channel_metrics_list_from_json(const json& j) {
  require(j.is_array(), Err::parse, "channel metrics: expected a json array");
  std::vector<ChannelMetrics> out;
  for (const auto& e : j) out.push_back(channel_metrics_from_json(e));
  return out;
}

inline json to_json(const GroupSummary& g) {
  json j;
  j["key"] = g.key;
  j["n"] = g.n;
  j["n_success"] = g.n_success;
  j["n_observable"] = g.n_observable;
  j["mean_r"] = g.mean_r;
  j["sd_r"] = g.sd_r;
  j["mean_r2"] = g.mean_r2;
  j["sd_r2"] = g.sd_r2;
  j["success_rate"] = g.success_rate;
  j["viable"] = g.viable;
  return j;
}

inline json to_json(const std::vector<GroupSummary>& v) {
  json j = json::array();
  for (const auto& g : v) j.push_back(to_json(g));
  return j;
}

inline json to_json(const EpochStats& e) {
  json j;
  j["epoch"] = e.epoch;
  j["mse"] = e.mse;
  j["pearson"] = e.pearson;
  j["spectral"] = e.spectral;
  j["total"] = e.total;
  j["calib_r"] = std::isfinite(e.calib_r) ? json(e.calib_r) : json(nullptr);
  return j;
}

inline json to_json(const std::vector<EpochStats>& curve) {
  json j = json::array();
  for (const auto& e : curve) j.push_back(to_json(e));
  return j;
}

inline json to_json(const LmmFit& f) {
  static const char* slot[3] = {"intercept", "mid", "deep"};
  json j;
  for (const char* field : {"beta", "se", "t", "p", "estimable"}) j[field] = json::object();
  for (int i = 0; i < 3; ++i) {
    j["beta"][slot[i]] = f.estimable[size_t(i)] ? json(f.beta[size_t(i)]) : json(nullptr);
    j["se"][slot[i]] = f.estimable[size_t(i)] ? json(f.se[size_t(i)]) : json(nullptr);
    j["t"][slot[i]] = f.estimable[size_t(i)] ? json(f.t[size_t(i)]) : json(nullptr);
    j["p"][slot[i]] = f.estimable[size_t(i)] ? json(f.p[size_t(i)]) : json(nullptr);
    j["estimable"][slot[i]] = f.estimable[size_t(i)];
  }
  j["sigma_u2"] = f.sigma_u2;
  j["sigma_e2"] = f.sigma_e2;
  j["lambda"] = f.lambda;
  j["loglik"] = f.loglik;
  j["n_obs"] = f.n_obs;
  j["n_groups"] = f.n_groups;
  return j;
}

inline json to_json(const DepthGradientReport& r) {
  json j;
  j["per_depth"] = to_json(r.per_depth);
  j["fit"] = to_json(r.fit);
  j["testable"] = r.testable;
  j["significant"] = r.significant;
  j["verdict"] = r.verdict;
  return j;
}

inline json to_json(const AccessLedger& l) {
  json j;
  j["calib_accesses"] = l.calib_accesses;
  j["test_eval_passes"] = l.test_eval_passes;
  return j;
}

inline json to_json(const PhaseBResult& b) {
  json j;
  j["warmup_r"] = b.warmup_r;
  j["observable"] = b.observable;
  j["trained"] = b.trained;
  j["warmup_curve"] = to_json(b.warmup_curve);
  j["train_curve"] = to_json(b.train_curve);
  return j;
}

inline json to_json(const FoldReport& f) {
  json j;
  j["test_subject"] = f.test_subject;
  j["excluded"] = f.excluded;
  j["exclusion_reason"] = f.exclusion_reason;
  j["n_calib"] = f.n_calib;
  j["n_test"] = f.n_test;
  j["pretrain_trace"] = f.pretrain_trace;
  json curves = json::array();
  for (const auto& c : f.pretrain_curves) curves.push_back(to_json(c));
  j["pretrain_curves"] = std::move(curves);
  j["phase_a_curve"] = to_json(f.phaseA_curve);
  j["phase_b"] = to_json(f.phaseB);
  j["metrics_all"] = to_json(f.metrics_all);
  j["metrics_obs"] = to_json(f.metrics_obs);
  j["ledger"] = to_json(f.ledger);
  return j;
}

// ---------------------------------------------------------------------------
// pooled views over a LOSO run

inline std::vector<ChannelMetrics> pooled_all(const LosoReport& rep) {
  std::vector<ChannelMetrics> out;
  for (const auto& f : rep.folds)
    if (!f.excluded) out.insert(out.end(), f.metrics_all.begin(), f.metrics_all.end());
  return out;
}

inline std::vector<ChannelMetrics> pooled_obs(const LosoReport& rep) {
  std::vector<ChannelMetrics> out;
  for (const auto& f : rep.folds)
    if (!f.excluded) out.insert(out.end(), f.metrics_obs.begin(), f.metrics_obs.end());
  return out;
}

// Headline comparison: the Phase-B model on its selected channels against
// the Phase-A model on every channel, both on held-out windows.
struct ObsBenefit {
  int n_all = 0;
  int n_obs = 0;
  int folds_with_obs = 0;
  double mean_r_all = 0.0;
  double mean_r_obs = 0.0;
  double delta = 0.0;
};

inline ObsBenefit obs_benefit(const LosoReport& rep) {
  ObsBenefit b;
  for (const auto& f : rep.folds) {
    if (f.excluded) continue;
    for (const auto& m : f.metrics_all) {
      b.mean_r_all += m.r;
      ++b.n_all;
    }
    if (!f.metrics_obs.empty()) ++b.folds_with_obs;
    for (const auto& m : f.metrics_obs) {
      b.mean_r_obs += m.r;
      ++b.n_obs;
    }
  }
  if (b.n_all > 0) b.mean_r_all /= b.n_all;
  if (b.n_obs > 0) b.mean_r_obs /= b.n_obs;
  b.delta = (b.n_all > 0 && b.n_obs > 0) ? b.mean_r_obs - b.mean_r_all : 0.0;
  return b;
}

inline json to_json(const ObsBenefit& b) {
  json j;
  j["n_all"] = b.n_all;
  j["n_obs"] = b.n_obs;
  j["folds_with_obs"] = b.folds_with_obs;
  j["mean_r_all"] = b.mean_r_all;
  j["mean_r_obs"] = b.mean_r_obs;
  j["delta"] = b.delta;
  return j;
}

// Depth gradient on pooled metrics, demoted to a status object when the
// pooled data cannot support the model (one subject, no deep contacts, ...).
inline json depth_gradient_json(const std::vector<ChannelMetrics>& metrics) {
  try {
    return to_json(depth_gradient_report(metrics));
  } catch (const Error& e) {
    json j;
    j["testable"] = false;
    j["significant"] = false;
    j["verdict"] = std::string("untestable: ") + e.what();
    return j;
  }
}

inline json aggregate_json(const std::vector<ChannelMetrics>& metrics) {
  json j;
  if (metrics.empty()) {
    j["n_channels"] = 0;
    return j;
  }
  GroupSummary whole;
  for (const auto& m : metrics) {
    whole.mean_r += m.r;
    whole.mean_r2 += m.r2;
    whole.n_success += m.success;
    whole.n_observable += m.observable;
  }
  whole.n = int(metrics.size());
  whole.mean_r /= whole.n;
  whole.mean_r2 /= whole.n;
  for (const auto& m : metrics) {
    whole.sd_r += (m.r - whole.mean_r) * (m.r - whole.mean_r);
    whole.sd_r2 += (m.r2 - whole.mean_r2) * (m.r2 - whole.mean_r2);
  }
  whole.sd_r = std::sqrt(whole.sd_r / whole.n);
  whole.sd_r2 = std::sqrt(whole.sd_r2 / whole.n);
  whole.success_rate = double(whole.n_success) / whole.n;

  j["n_channels"] = whole.n;
  j["mean_r"] = whole.mean_r;
  j["sd_r"] = whole.sd_r;
  j["mean_r2"] = whole.mean_r2;
  j["sd_r2"] = whole.sd_r2;
  j["n_success"] = whole.n_success;
  j["success_rate"] = whole.success_rate;
  j["by_subject"] = to_json(aggregate(metrics, GroupBy::subject));
  j["by_region"] = to_json(aggregate(metrics, GroupBy::region));
  j["by_depth"] = to_json(aggregate(metrics, GroupBy::depth));
  return j;
}

inline json loso_summary_json(const LosoReport& rep) {
  json j;
  json folds = json::array();
  for (const auto& f : rep.folds) folds.push_back(to_json(f));
  j["folds"] = std::move(folds);

  std::vector<ChannelMetrics> all = pooled_all(rep), obs = pooled_obs(rep);
  j["pooled_all"] = aggregate_json(all);
  j["pooled_obs"] = aggregate_json(obs);
  j["obs_benefit"] = to_json(obs_benefit(rep));
  j["depth_gradient"] = all.empty() ? depth_gradient_json(obs) : depth_gradient_json(all);
  return j;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string channel_csv(const std::vector<ChannelMetrics>& metrics) {
  std::string out = "subject,channel,region,depth,r,r2_raw,r2,rmse,n_windows,success,observable\n";
  for (const auto& m : metrics) {
    out += m.subject + ',' + m.channel + ',' + m.region + ',' + to_string(m.depth) + ',';
    out += detail::csv_num(m.r) + ',' + detail::csv_num(m.r2_raw) + ',' + detail::csv_num(m.r2) +
           ',' + detail::csv_num(m.rmse) + ',';
    out += std::to_string(m.n_windows) + ',' + (m.success ? "1" : "0") + ',' +
           (m.observable ? "1" : "0") + '\n';
  }
  return out;
}

inline std::string curve_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,mse,pearson,spectral,total,calib_r\n";
  for (const auto& e : curve) {
    out += std::to_string(e.epoch) + ',' + detail::csv_num(e.mse) + ',' +
           detail::csv_num(e.pearson) + ',' + detail::csv_num(e.spectral) + ',' +
           detail::csv_num(e.total) + ',' + detail::csv_num(e.calib_r) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// text tables

inline std::string channel_table(const std::vector<ChannelMetrics>& metrics) {
  std::string out = "subject   channel   region        depth        r      R2    rmse  flags\n";
  for (const auto& m : metrics) {
    out += detail::pad(m.subject, 10) + detail::pad(m.channel, 10) + detail::pad(m.region, 14) +
           detail::pad(to_string(m.depth), 9);
    out += detail::fmt("%7.3f", m.r) + detail::fmt("%8.3f", m.r2) + detail::fmt("%8.3f", m.rmse);
    out += std::string("  ") + (m.success ? "S" : "-") + (m.observable ? "O" : "-") + "\n";
  }
  return out;
}

inline std::string group_table(const std::vector<GroupSummary>& groups, const std::string& label) {
  std::string out = detail::pad(label, 14) + "   n       r (mean+/-sd)        R2  success  obs\n";
  for (const auto& g : groups) {
    out += detail::pad(g.key, 14) + detail::fmt("%4.0f", double(g.n));
    out += detail::fmt("%10.3f", g.mean_r) + " +/- " + detail::fmt("%-6.3f", g.sd_r);
    out += detail::fmt("%9.3f", g.mean_r2);
    out += detail::fmt("%8.2f", g.success_rate);
    out += detail::fmt("%6.0f", double(g.n_observable));
    out += g.viable ? "  viable" : "";
    out += '\n';
  }
  return out;
}

inline std::string loso_text(const LosoReport& rep) {
  std::string out;
  for (const auto& f : rep.folds) {
    out += "fold " + f.test_subject + ": ";
    if (f.excluded) {
      out += "excluded (" + f.exclusion_reason + ")\n";
      continue;
    }
    out += std::to_string(f.n_calib) + " calib / " + std::to_string(f.n_test) + " test windows, ";
    out += std::to_string(f.phaseB.observable.size()) + " observable";
    out += f.phaseB.trained || f.phaseB.observable.empty() ? "" : " (phase B skipped)";
    out += "\n";
  }

  std::vector<ChannelMetrics> all = pooled_all(rep), obs = pooled_obs(rep);
  if (!all.empty()) {
    out += "\nALL channels (phase A decoder)\n";
    out += group_table(aggregate(all, GroupBy::depth), "depth");
    out += group_table(aggregate(all, GroupBy::subject), "subject");
  }
  if (!obs.empty()) {
    out += "\nOBS channels (phase B decoder)\n";
    out += group_table(aggregate(obs, GroupBy::depth), "depth");
    out += group_table(aggregate(obs, GroupBy::subject), "subject");
  }
  if (!all.empty() && !obs.empty()) {
    ObsBenefit b = obs_benefit(rep);
    out += "\nmean r: ALL " + detail::fmt("%.3f", b.mean_r_all) + "  OBS " +
           detail::fmt("%.3f", b.mean_r_obs) + "  delta " + detail::fmt("%+.3f", b.delta) + "\n";
  }

  const std::vector<ChannelMetrics>& basis = all.empty() ? obs : all;
  if (!basis.empty()) {
    json dg = depth_gradient_json(basis);
    out += "depth gradient: " + dg["verdict"].get<std::string>() + "\n";
  }
  return out;
}

}  // namespace cast::report
