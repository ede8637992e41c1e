// cast: scalp-EEG to intracranial-EEG translation pipeline.
//
// Subcommands: synth, preprocess, pretrain, calibrate, evaluate, loso,
// stats, ablate-report. Every run resolves a flat dotted-key configuration
// (defaults < profile < --config file < --set overrides < explicit flags),
// then writes its artifacts into <out>/<command>-<hash>/ where the hash is
// taken over the resolved configuration. Nothing written depends on wall
// time, so rerunning an identical command reproduces identical bytes.
//
// Exit codes: 0 success, 2 usage/config/missing file, 3 data error,
// 4 numeric failure.

#include "CLI11.hpp"
#include "cast/checkpoint.hpp"
#include "cast/report.hpp"
#include "cast/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cast;

namespace {

// ---------------------------------------------------------------------------
// configuration

struct RunConfig {
  uint64_t seed = 0;
  std::string out = "runs";
  std::string profile = "synthetic";  // synthetic | gin | ds004752
  CastConfig model;
  LosoPlan plan;  // subjects are derived from the data at run time
  synth::CohortSpec synth;
  PreprocessConfig preprocess;
};

// The full key set in canonical order. Serialization and override parsing
// share this list so config.json is stable and typos are caught.
json flatten(const RunConfig& rc) {
  json j = json::object();
  j["seed"] = rc.seed;
  j["out"] = rc.out;
  j["profile"] = rc.profile;
  j["model.d_model"] = rc.model.d_model;
  j["model.scales"] = rc.model.scales;
  j["model.encoder_layers"] = rc.model.encoder_layers;
  j["model.decoder_layers"] = rc.model.decoder_layers;
  j["model.heads"] = rc.model.heads;
  j["model.ff_dim"] = rc.model.ff_dim;
  j["model.n_queries"] = rc.model.n_queries;
  j["model.dropout"] = rc.model.dropout;
  j["plan.pretrain_loops"] = rc.plan.pretrain_loops;
  j["plan.pretrain_passes_per_subject"] = rc.plan.pretrain_passes_per_subject;
  j["plan.pretrain_lr"] = rc.plan.pretrain_lr;
  j["plan.calib_fraction"] = rc.plan.calib_fraction;
  j["plan.phase_a_epochs"] = rc.plan.phaseA_epochs;
  j["plan.phase_b_warmup_epochs"] = rc.plan.phaseB_warmup_epochs;
  j["plan.observable_threshold"] = rc.plan.observable_threshold;
  j["plan.encoder_ft_lr"] = rc.plan.encoder_ft_lr;
  j["plan.decoder_lr"] = rc.plan.decoder_lr;
  j["plan.batch_size"] = rc.plan.batch_size;
  j["plan.curve_eval_every"] = rc.plan.curve_eval_every;
  j["plan.run_phase_a"] = rc.plan.run_phase_a;
  j["plan.run_phase_b"] = rc.plan.run_phase_b;
  j["augment.noise_sigma"] = rc.plan.augment.noise_sigma;
  j["augment.amp_lo"] = rc.plan.augment.amp_lo;
  j["augment.amp_hi"] = rc.plan.augment.amp_hi;
  j["augment.max_shift"] = rc.plan.augment.max_shift;
  j["augment.apply_prob"] = rc.plan.augment.apply_prob;
  j["loss.w_mse"] = rc.plan.loss_weights.mse;
  j["loss.w_pearson"] = rc.plan.loss_weights.pearson;
  j["loss.w_spectral"] = rc.plan.loss_weights.spectral;
  j["synth.n_subjects"] = rc.synth.n_subjects;
  j["synth.duration_s"] = rc.synth.duration_s;
  j["synth.n_eeg"] = rc.synth.subject.n_eeg;
  j["synth.gain0"] = rc.synth.subject.gain0;
  j["synth.lambda_mm"] = rc.synth.subject.lambda_mm;
  j["synth.sensor_noise_sd"] = rc.synth.subject.sensor_noise_sd;
  j["synth.depth_noise_sd"] = rc.synth.subject.depth_noise_sd;
  j["synth.pink_weight"] = rc.synth.subject.pink_weight;
  j["preprocess.resample_to_hz"] = rc.preprocess.resample_to_hz;
  j["preprocess.notch"] = rc.preprocess.notch;
  j["preprocess.notch_hz"] = rc.preprocess.notch_hz;
  j["preprocess.notch_width_hz"] = rc.preprocess.notch_width_hz;
  j["preprocess.bandpass"] = rc.preprocess.bandpass;
  j["preprocess.bandpass_lo_hz"] = rc.preprocess.bandpass_lo_hz;
  j["preprocess.bandpass_hi_hz"] = rc.preprocess.bandpass_hi_hz;
  return j;
}

template <class T>
T as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const std::exception&) {
    fail(Err::config, "config: bad value for '" + key + "': " + v.dump());
  }
}

void apply_key(RunConfig& rc, const std::string& k, const json& v) {
  if (k == "seed") rc.seed = as<uint64_t>(v, k);
  else if (k == "out") rc.out = as<std::string>(v, k);
  else if (k == "profile") rc.profile = as<std::string>(v, k);
  else if (k == "model.d_model") rc.model.d_model = as<Index>(v, k);
  else if (k == "model.scales") rc.model.scales = as<std::vector<Index>>(v, k);
  else if (k == "model.encoder_layers") rc.model.encoder_layers = as<Index>(v, k);
  else if (k == "model.decoder_layers") rc.model.decoder_layers = as<Index>(v, k);
  else if (k == "model.heads") rc.model.heads = as<Index>(v, k);
  else if (k == "model.ff_dim") rc.model.ff_dim = as<Index>(v, k);
  else if (k == "model.n_queries") rc.model.n_queries = as<Index>(v, k);
  else if (k == "model.dropout") rc.model.dropout = as<double>(v, k);
  else if (k == "plan.pretrain_loops") rc.plan.pretrain_loops = as<int>(v, k);
  else if (k == "plan.pretrain_passes_per_subject")
    rc.plan.pretrain_passes_per_subject = as<int>(v, k);
  else if (k == "plan.pretrain_lr") rc.plan.pretrain_lr = as<double>(v, k);
  else if (k == "plan.calib_fraction") rc.plan.calib_fraction = as<double>(v, k);
  else if (k == "plan.phase_a_epochs") rc.plan.phaseA_epochs = as<int>(v, k);
  else if (k == "plan.phase_b_warmup_epochs") rc.plan.phaseB_warmup_epochs = as<int>(v, k);
  else if (k == "plan.observable_threshold") rc.plan.observable_threshold = as<double>(v, k);
  else if (k == "plan.encoder_ft_lr") rc.plan.encoder_ft_lr = as<double>(v, k);
  else if (k == "plan.decoder_lr") rc.plan.decoder_lr = as<double>(v, k);
  else if (k == "plan.batch_size") rc.plan.batch_size = as<int>(v, k);
  else if (k == "plan.curve_eval_every") rc.plan.curve_eval_every = as<int>(v, k);
  else if (k == "plan.run_phase_a") rc.plan.run_phase_a = as<bool>(v, k);
  else if (k == "plan.run_phase_b") rc.plan.run_phase_b = as<bool>(v, k);
  else if (k == "augment.noise_sigma") rc.plan.augment.noise_sigma = as<double>(v, k);
  else if (k == "augment.amp_lo") rc.plan.augment.amp_lo = as<double>(v, k);
  else if (k == "augment.amp_hi") rc.plan.augment.amp_hi = as<double>(v, k);
  else if (k == "augment.max_shift") rc.plan.augment.max_shift = as<int>(v, k);
  else if (k == "augment.apply_prob") rc.plan.augment.apply_prob = as<double>(v, k);
  else if (k == "loss.w_mse") rc.plan.loss_weights.mse = as<double>(v, k);
  else if (k == "loss.w_pearson") rc.plan.loss_weights.pearson = as<double>(v, k);
  else if (k == "loss.w_spectral") rc.plan.loss_weights.spectral = as<double>(v, k);
  else if (k == "synth.n_subjects") rc.synth.n_subjects = as<int>(v, k);
  else if (k == "synth.duration_s") rc.synth.duration_s = as<double>(v, k);
  else if (k == "synth.n_eeg") rc.synth.subject.n_eeg = as<int>(v, k);
  else if (k == "synth.gain0") rc.synth.subject.gain0 = as<double>(v, k);
  else if (k == "synth.lambda_mm") rc.synth.subject.lambda_mm = as<double>(v, k);
  else if (k == "synth.sensor_noise_sd") rc.synth.subject.sensor_noise_sd = as<double>(v, k);
  else if (k == "synth.depth_noise_sd") rc.synth.subject.depth_noise_sd = as<double>(v, k);
  else if (k == "synth.pink_weight") rc.synth.subject.pink_weight = as<double>(v, k);
  else if (k == "preprocess.resample_to_hz") rc.preprocess.resample_to_hz = as<double>(v, k);
  else if (k == "preprocess.notch") rc.preprocess.notch = as<bool>(v, k);
  else if (k == "preprocess.notch_hz") rc.preprocess.notch_hz = as<double>(v, k);
  else if (k == "preprocess.notch_width_hz") rc.preprocess.notch_width_hz = as<double>(v, k);
  else if (k == "preprocess.bandpass") rc.preprocess.bandpass = as<bool>(v, k);
  else if (k == "preprocess.bandpass_lo_hz") rc.preprocess.bandpass_lo_hz = as<double>(v, k);
  else if (k == "preprocess.bandpass_hi_hz") rc.preprocess.bandpass_hi_hz = as<double>(v, k);
  else fail(Err::config, "config: unknown key '" + k + "'");
}

void apply_profile(RunConfig& rc) {
  if (rc.profile == "ds004752") {
    rc.preprocess.notch = true;
    rc.preprocess.bandpass = true;
  } else if (rc.profile == "gin" || rc.profile == "synthetic") {
    rc.preprocess.notch = false;
    rc.preprocess.bandpass = false;
  } else {
    fail(Err::config, "config: unknown profile '" + rc.profile + "'");
  }
}

// Options shared by every subcommand plus the per-command extras that name
// input data. The resolved config (with extras appended) is what gets
// hashed, so the same command line always lands in the same directory.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  bool seed_passed = false;
  std::string out;

  RunConfig resolve(const std::vector<std::pair<std::string, std::string>>& extras,
                    json* canon_out) const {
    RunConfig rc;
    json staged = json::object();
    if (!config_path.empty()) {
      json file = ioutil::load_json(config_path);
      require(file.is_object(), Err::config, "config: expected a flat json object");
      for (auto it = file.begin(); it != file.end(); ++it) staged[it.key()] = it.value();
    }
    for (const auto& kv : sets) {
      auto eq = kv.find('=');
      require(eq != std::string::npos && eq > 0, Err::config,
              "config: --set expects key=value, got '" + kv + "'");
      std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
      json v = json::parse(raw, nullptr, false);
      if (v.is_discarded()) v = raw;  // unquoted strings
      staged[key] = v;
    }
    // profile first so explicit preprocess.* keys win over it
    if (staged.contains("profile")) rc.profile = as<std::string>(staged["profile"], "profile");
    apply_profile(rc);
    for (auto it = staged.begin(); it != staged.end(); ++it) apply_key(rc, it.key(), it.value());
    if (seed_passed) rc.seed = seed;
    if (!out.empty()) rc.out = out;
    rc.plan.seed = rc.seed;

    if (canon_out) {
      *canon_out = flatten(rc);
      for (const auto& [k, v] : extras) (*canon_out)["arg." + k] = v;
    }
    return rc;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "flat dotted-key json config file");
  cmd->add_option("--set", c.sets, "override a config key, e.g. --set model.d_model=64");
  cmd->add_option("--seed", c.seed, "master seed")->each([&c](const std::string&) {
    c.seed_passed = true;
  });
  cmd->add_option("--out", c.out, "output root directory");
}

// ---------------------------------------------------------------------------
// run directory plumbing

struct RunDir {
  fs::path dir;
  std::string log;

  void say(const std::string& line) {
    std::cout << line << "\n";
    log += line + "\n";
  }
  void finish(const json& canon) {
    ioutil::save_json((dir / "config.json").string(), canon);
    report::write_text((dir / "log.txt").string(), log);
    std::cout << dir.string() << "\n";
  }
};

RunDir open_run_dir(const RunConfig& rc, const std::string& command, const json& canon) {
  RunDir rd;
  rd.dir = fs::path(rc.out) / (command + "-" + report::hash_hex12(canon.dump()));
  std::error_code ec;
  fs::create_directories(rd.dir, ec);
  require(!ec, Err::io, "cannot create '" + rd.dir.string() + "'");
  return rd;
}

std::vector<std::string> scan_bases(const std::string& dir, const std::string& suffix) {
  require(fs::is_directory(dir), Err::io, "'" + dir + "' is not a directory");
  std::vector<std::string> bases;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix))
      bases.push_back((e.path().parent_path() / name.substr(0, name.size() - suffix.size()))
                          .string());
  }
  std::sort(bases.begin(), bases.end());
  require(!bases.empty(), Err::io, "no '*" + suffix + "' files in '" + dir + "'");
  return bases;
}

std::vector<WindowSet> load_window_dir(const std::string& dir) {
  std::vector<WindowSet> out;
  for (const auto& base : scan_bases(dir, ".windows.json")) out.push_back(load_windows(base));
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint <-> model

void save_model(const std::string& path, const CastModel<float>& model, const RunConfig& rc,
                json extra) {
  CheckpointHeader hdr;
  hdr.rng_seed = rc.seed;
  json m;
  m["d_model"] = model.config().d_model;
  m["scales"] = model.config().scales;
  m["encoder_layers"] = model.config().encoder_layers;
  m["decoder_layers"] = model.config().decoder_layers;
  m["heads"] = model.config().heads;
  m["ff_dim"] = model.config().ff_dim;
  m["n_queries"] = model.config().n_queries;
  m["dropout"] = model.config().dropout;
  extra["model"] = std::move(m);
  extra["channels"] = model.channels();
  hdr.extra = std::move(extra);
  save_checkpoint(path, model.params(), hdr);
}

CastModel<float> load_model(const std::string& path, CheckpointHeader* hdr_out = nullptr) {
  nn::ParamStore<float> probe;
  CheckpointHeader hdr = load_checkpoint(path, probe);
  require(hdr.extra.contains("model") && hdr.extra.contains("channels"), Err::parse,
          "'" + path + "' lacks the model geometry header");
  const json& m = hdr.extra["model"];
  CastConfig cfg;
  cfg.d_model = m.at("d_model").get<Index>();
  cfg.scales = m.at("scales").get<std::vector<Index>>();
  cfg.encoder_layers = m.at("encoder_layers").get<Index>();
  cfg.decoder_layers = m.at("decoder_layers").get<Index>();
  cfg.heads = m.at("heads").get<Index>();
  cfg.ff_dim = m.at("ff_dim").get<Index>();
  cfg.n_queries = m.at("n_queries").get<Index>();
  cfg.dropout = m.at("dropout").get<double>();
  CastModel<float> model(cfg, hdr.extra["channels"].get<std::vector<std::string>>(), 0);
  load_checkpoint(path, model.params());
  if (hdr_out) *hdr_out = std::move(hdr);
  return model;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_synth(const Common& common, int n_subjects, double duration) {
  json canon;
  RunConfig rc = common.resolve({}, &canon);
  if (n_subjects > 0) {
    rc.synth.n_subjects = n_subjects;
    canon["synth.n_subjects"] = n_subjects;
  }
  if (duration > 0) {
    rc.synth.duration_s = duration;
    canon["synth.duration_s"] = duration;
  }
  require(rc.synth.n_subjects >= 2, Err::config,
          "synth: a leave-one-subject-out cohort needs at least 2 subjects");

  std::vector<synth::SyntheticSubject> cohort = synth::make_cohort(rc.synth, rc.seed);
  RunDir rd = open_run_dir(rc, "synth", canon);

  json truth = json::object();
  truth["subjects"] = json::array();
  for (const auto& s : cohort) {
    save_recording(s.recording, (rd.dir / s.recording.subject_id).string());
    json t;
    t["id"] = s.recording.subject_id;
    t["seed"] = s.seed;
    t["depths_mm"] = s.depths_mm;
    t["montage_slots"] = s.slots;
    json lf = json::array();
    for (Index i = 0; i < s.leadfield.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < s.leadfield.cols(); ++j) row.push_back(s.leadfield(i, j));
      lf.push_back(std::move(row));
    }
    t["leadfield"] = std::move(lf);
    truth["subjects"].push_back(std::move(t));
    rd.say("subject " + s.recording.subject_id + ": " + std::to_string(s.depths_mm.size()) +
           " depth contacts, " + std::to_string(s.recording.n_samples()) + " samples");
  }
  ioutil::save_json((rd.dir / "truth.json").string(), truth);
  rd.finish(canon);
  return 0;
}

int cmd_preprocess(const Common& common, const std::string& in_dir) {
  json canon;
  RunConfig rc = common.resolve({{"in", in_dir}}, &canon);
  std::vector<std::string> bases = scan_bases(in_dir, ".manifest.json");
  RunDir rd = open_run_dir(rc, "preprocess", canon);

  json rows = json::array();
  Index total = 0;
  for (const auto& base : bases) {
    Recording rec = load_recording(base);
    Recording pre = preprocess(rec, rc.preprocess);
    json r;
    r["subject"] = rec.subject_id;
    // a fully rejected subject is recorded, not fatal; only an empty cohort is
    try {
      WindowSet ws = make_windows(pre);
      save_windows(ws, (rd.dir / rec.subject_id).string());
      r["n_candidates"] = ws.n_candidates;
      r["n_windows"] = ws.n_windows();
      r["rejected"] = ws.n_rejected;
      r["rejection_rate"] =
          ws.n_candidates > 0 ? double(ws.n_rejected) / double(ws.n_candidates) : 0.0;
      total += ws.n_windows();
      rd.say("subject " + rec.subject_id + ": " + std::to_string(ws.n_windows()) + "/" +
             std::to_string(ws.n_candidates) + " windows kept");
    } catch (const Error& e) {
      if (e.code() != Err::empty_result) throw;
      r["n_windows"] = 0;
      r["note"] = e.what();
      rd.say("subject " + rec.subject_id + ": no usable windows");
    }
    rows.push_back(std::move(r));
  }
  require(total > 0, Err::empty_result, "preprocess: no windows survived in any subject");
  json rep;
  rep["subjects"] = std::move(rows);
  ioutil::save_json((rd.dir / "preprocess_report.json").string(), rep);
  rd.finish(canon);
  return 0;
}

int cmd_pretrain(const Common& common, const std::string& windows_dir,
                 const std::string& exclude) {
  json canon;
  RunConfig rc = common.resolve({{"windows", windows_dir}, {"exclude", exclude}}, &canon);
  std::vector<WindowSet> all = load_window_dir(windows_dir);

  std::vector<const WindowSet*> heldin;
  for (const auto& ws : all)
    if (ws.source_subject != exclude) heldin.push_back(&ws);
  require(!heldin.empty(), Err::insufficient_data, "pretrain: no held-in subjects");
  require(exclude.empty() || heldin.size() < all.size(), Err::config,
          "pretrain: excluded subject '" + exclude + "' not found");

  RunDir rd = open_run_dir(rc, "pretrain", canon);
  CastModel<float> model(rc.model, detail::channel_names(*heldin.front()), rc.seed);
  PretrainReport rep = pretrain_encoder(model, heldin, rc.plan);

  for (size_t v = 0; v < rep.curves.size(); ++v)
    report::write_text(
        (rd.dir / ("pretrain_v" + std::to_string(v) + "_" + rep.trace[v] + ".csv")).string(),
        report::curve_csv(rep.curves[v]));
  json extra;
  extra["phase"] = "pretrain";
  extra["trace"] = rep.trace;
  save_model((rd.dir / "encoder.ckpt").string(), model, rc, extra);

  json summary;
  summary["trace"] = rep.trace;
  json finals = json::array();
  for (const auto& c : rep.curves) finals.push_back(c.empty() ? 0.0 : c.back().total);
  summary["final_totals"] = std::move(finals);
  ioutil::save_json((rd.dir / "pretrain_report.json").string(), summary);
  for (const auto& s : rep.trace) rd.say("visited " + s);
  rd.finish(canon);
  return 0;
}

int cmd_calibrate(const Common& common, const std::string& ckpt, const std::string& windows_base,
                  const std::string& phase) {
  json canon;
  RunConfig rc =
      common.resolve({{"checkpoint", ckpt}, {"windows", windows_base}, {"phase", phase}}, &canon);
  require(phase == "A" || phase == "B" || phase == "both", Err::config,
          "calibrate: --phase must be A, B or both");

  CastModel<float> model = load_model(ckpt);
  WindowSet ws = load_windows(windows_base);
  SubjectView view(ws, rc.plan.calib_fraction);
  RunDir rd = open_run_dir(rc, "calibrate", canon);

  json rep;
  rep["subject"] = ws.source_subject;
  rep["n_calib"] = Index(view.n_calib());
  rep["n_test"] = Index(view.n_test());

  if (phase == "A" || phase == "both") {
    CastModel<float> a = model.clone();
    std::vector<EpochStats> curve = calibrate_phaseA(a, view.calib(), rc.plan);
    report::write_text((rd.dir / "phase_a_curve.csv").string(), report::curve_csv(curve));
    json extra;
    extra["phase"] = "A";
    extra["subject"] = ws.source_subject;
    save_model((rd.dir / "phase_a.ckpt").string(), a, rc, extra);
    rd.say("phase A: " + std::to_string(rc.plan.phaseA_epochs) + " epochs on " +
           std::to_string(view.n_calib()) + " calibration windows");
  }
  if (phase == "B" || phase == "both") {
    CastModel<float> b = model.clone();
    PhaseBResult pb = calibrate_phaseB(b, view.calib(), rc.plan);
    report::write_text((rd.dir / "phase_b_warmup.csv").string(), report::curve_csv(pb.warmup_curve));
    report::write_text((rd.dir / "phase_b_train.csv").string(), report::curve_csv(pb.train_curve));
    rep["phase_b"] = report::to_json(pb);
    if (pb.trained) {
      json extra;
      extra["phase"] = "B";
      extra["subject"] = ws.source_subject;
      save_model((rd.dir / "phase_b.ckpt").string(), b, rc, extra);
    }
    rd.say("phase B: " + std::to_string(pb.observable.size()) + " observable channels" +
           (pb.trained ? "" : " (decoder not trained)"));
  }
  rep["ledger"] = report::to_json(view.ledger());
  ioutil::save_json((rd.dir / "calib_report.json").string(), rep);
  rd.finish(canon);
  return 0;
}

int cmd_evaluate(const Common& common, const std::string& ckpt, const std::string& windows_base,
                 const std::string& split) {
  json canon;
  RunConfig rc =
      common.resolve({{"checkpoint", ckpt}, {"windows", windows_base}, {"split", split}}, &canon);
  require(split == "test" || split == "calib" || split == "all", Err::config,
          "evaluate: --split must be test, calib or all");

  CastModel<float> model = load_model(ckpt);
  WindowSet ws = load_windows(windows_base);
  RunDir rd = open_run_dir(rc, "evaluate", canon);

  std::vector<ChannelMetrics> metrics;
  if (split == "all") {
    metrics = evaluate_model(model, ws, rc.plan.batch_size);
  } else {
    SubjectView view(ws, rc.plan.calib_fraction);
    metrics = evaluate_model(model, split == "test" ? view.test_for_eval() : view.calib(),
                             rc.plan.batch_size);
  }

  ioutil::save_json((rd.dir / "metrics.json").string(), report::to_json(metrics));
  report::write_text((rd.dir / "metrics.csv").string(), report::channel_csv(metrics));
  report::write_text((rd.dir / "table.txt").string(), report::channel_table(metrics));
  ioutil::save_json((rd.dir / "aggregate.json").string(), report::aggregate_json(metrics));
  rd.say(report::channel_table(metrics));
  rd.finish(canon);
  return 0;
}

void apply_ablation(RunConfig& rc, json& canon, const std::string& ab) {
  if (ab == "scales=8" || ab == "scales=16" || ab == "scales=32") {
    rc.model.scales = {Index(std::stol(ab.substr(7)))};
    canon["model.scales"] = rc.model.scales;
  } else if (ab == "loss=mse") {
    rc.plan.loss_weights = {1.0, 0.0, 0.0};
  } else if (ab == "loss=mse+pearson") {
    rc.plan.loss_weights = {1.0, 1.0, 0.0};
  } else if (ab == "loss=mse+spectral") {
    rc.plan.loss_weights = {1.0, 0.0, 0.1};
  } else if (ab == "loss=full") {
    rc.plan.loss_weights = {1.0, 1.0, 0.1};
  } else {
    fail(Err::config, "loso: unknown ablation '" + ab + "'");
  }
  canon["loss.w_mse"] = rc.plan.loss_weights.mse;
  canon["loss.w_pearson"] = rc.plan.loss_weights.pearson;
  canon["loss.w_spectral"] = rc.plan.loss_weights.spectral;
}

int cmd_loso(const Common& common, const std::string& windows_dir, const std::string& phase,
             const std::vector<std::string>& ablations) {
  json canon;
  RunConfig rc = common.resolve({{"windows", windows_dir}, {"phase", phase}}, &canon);
  require(phase == "A" || phase == "B" || phase == "both", Err::config,
          "loso: --phase must be A, B or both");
  rc.plan.run_phase_a = phase != "B";
  rc.plan.run_phase_b = phase != "A";
  canon["plan.run_phase_a"] = rc.plan.run_phase_a;
  canon["plan.run_phase_b"] = rc.plan.run_phase_b;
  for (const auto& ab : ablations) apply_ablation(rc, canon, ab);

  std::vector<WindowSet> all = load_window_dir(windows_dir);
  std::vector<const WindowSet*> cohort;
  for (const auto& ws : all) cohort.push_back(&ws);

  RunDir rd = open_run_dir(rc, "loso", canon);
  LosoReport rep = run_loso(cohort, rc.model, rc.plan);

  for (const auto& f : rep.folds) {
    fs::path fd = rd.dir / ("fold-" + f.test_subject);
    std::error_code ec;
    fs::create_directories(fd, ec);
    require(!ec, Err::io, "cannot create '" + fd.string() + "'");
    report::write_text((fd / "phase_a_curve.csv").string(), report::curve_csv(f.phaseA_curve));
    report::write_text((fd / "phase_b_warmup.csv").string(),
                       report::curve_csv(f.phaseB.warmup_curve));
    report::write_text((fd / "phase_b_train.csv").string(),
                       report::curve_csv(f.phaseB.train_curve));
    report::write_text((fd / "metrics_all.csv").string(), report::channel_csv(f.metrics_all));
    report::write_text((fd / "metrics_obs.csv").string(), report::channel_csv(f.metrics_obs));
  }
  ioutil::save_json((rd.dir / "summary.json").string(), report::loso_summary_json(rep));
  report::write_text((rd.dir / "channels_all.csv").string(),
                     report::channel_csv(report::pooled_all(rep)));
  report::write_text((rd.dir / "channels_obs.csv").string(),
                     report::channel_csv(report::pooled_obs(rep)));
  std::string text = report::loso_text(rep);
  report::write_text((rd.dir / "summary.txt").string(), text);
  rd.say(text);
  rd.finish(canon);
  return 0;
}

int cmd_stats(const Common& common, const std::string& metrics_path, const std::string& summary_path,
              int n_permute) {
  require(metrics_path.empty() != summary_path.empty(), Err::config,
          "stats: pass exactly one of --metrics or --summary");
  json canon;
  RunConfig rc = common.resolve(
      {{"metrics", metrics_path}, {"summary", summary_path}, {"permute", std::to_string(n_permute)}},
      &canon);

  std::vector<ChannelMetrics> metrics;
  if (!metrics_path.empty()) {
    metrics = report::channel_metrics_list_from_json(ioutil::load_json(metrics_path));
  } else {
    json s = ioutil::load_json(summary_path);
    require(s.contains("folds"), Err::parse, "stats: '" + summary_path + "' is not a loso summary");
    for (const auto& f : s["folds"]) {
      const json& block = f["metrics_all"].empty() ? f["metrics_obs"] : f["metrics_all"];
      for (const auto& m : block) metrics.push_back(report::channel_metrics_from_json(m));
    }
  }
  require(!metrics.empty(), Err::empty_result, "stats: no channel metrics to analyze");

  RunDir rd = open_run_dir(rc, "stats", canon);
  json dg = report::depth_gradient_json(metrics);

  if (n_permute > 0 && dg.value("testable", false) && !dg["fit"]["p"].is_null()) {
    std::vector<double> y;
    std::vector<Depth> depth;
    std::vector<std::string> subject;
    for (const auto& m : metrics) {
      y.push_back(m.r);
      depth.push_back(m.depth);
      subject.push_back(m.subject);
    }
    double p_obs = dg["fit"]["p"]["deep"].get<double>();
    std::vector<double> null_p = lmm_permutation_p(y, depth, subject, n_permute, Rng(rc.seed));
    int at_most = 0;
    for (double p : null_p)
      if (p <= p_obs) ++at_most;
    json perm;
    perm["n"] = n_permute;
    perm["p_observed"] = p_obs;
    perm["p_empirical"] = double(1 + at_most) / double(n_permute + 1);
    dg["permutation"] = std::move(perm);
  }
  ioutil::save_json((rd.dir / "depth_gradient.json").string(), dg);
  rd.say(dg["verdict"].get<std::string>());
  rd.finish(canon);
  return 0;
}

int cmd_ablate_report(const Common& common, const std::vector<std::string>& runs) {
  require(runs.size() >= 2, Err::config,
          "ablate-report: need at least two label=summary.json entries");
  std::vector<std::pair<std::string, std::string>> extras;
  for (size_t i = 0; i < runs.size(); ++i) extras.push_back({"run" + std::to_string(i), runs[i]});
  json canon;
  RunConfig rc = common.resolve(extras, &canon);

  struct Row {
    std::string label;
    double mean_r_all = 0.0, mean_r_obs = 0.0;
    int n_all = 0, n_obs = 0;
  };
  std::vector<Row> rows;
  for (const auto& spec : runs) {
    auto eq = spec.find('=');
    require(eq != std::string::npos && eq > 0, Err::config,
            "ablate-report: expected label=path, got '" + spec + "'");
    Row row;
    row.label = spec.substr(0, eq);
    json s = ioutil::load_json(spec.substr(eq + 1));
    require(s.contains("pooled_all") && s.contains("obs_benefit"), Err::parse,
            "ablate-report: '" + spec.substr(eq + 1) + "' is not a loso summary");
    row.n_all = s["pooled_all"].value("n_channels", 0);
    row.mean_r_all = s["pooled_all"].value("mean_r", 0.0);
    row.n_obs = s["obs_benefit"].value("n_obs", 0);
    row.mean_r_obs = s["obs_benefit"].value("mean_r_obs", 0.0);
    rows.push_back(std::move(row));
  }

  RunDir rd = open_run_dir(rc, "ablate-report", canon);
  // deltas on the ALL block: the channel set is identical across ablations,
  // while each ablation selects its own OBS subset
  json out = json::array();
  std::string table = "configuration        n_all  mean r (ALL)  delta r   n_obs  mean r (OBS)\n";
  for (const auto& row : rows) {
    double delta = row.mean_r_all - rows.front().mean_r_all;
    json r;
    r["label"] = row.label;
    r["n_all"] = row.n_all;
    r["mean_r_all"] = row.mean_r_all;
    r["delta_r_all"] = delta;
    r["n_obs"] = row.n_obs;
    r["mean_r_obs"] = row.mean_r_obs;
    out.push_back(std::move(r));
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s %5d %13.3f %+9.3f %7d %13.3f\n", row.label.c_str(),
                  row.n_all, row.mean_r_all, delta, row.n_obs, row.mean_r_obs);
    table += buf;
  }
  json rep;
  rep["baseline"] = rows.front().label;
  rep["rows"] = std::move(out);
  ioutil::save_json((rd.dir / "ablation_report.json").string(), rep);
  report::write_text((rd.dir / "ablation_table.txt").string(), table);
  rd.say(table);
  rd.finish(canon);
  return 0;
}

int code_for(Err e) {
  switch (e) {
    case Err::config:
    case Err::invalid_argument:
    case Err::io:
      return 2;
    case Err::numeric:
      return 4;
    default:
      return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scalp-EEG to intracranial-EEG translation pipeline"};
  app.require_subcommand(1);

  Common c_synth, c_pre, c_pretrain, c_calib, c_eval, c_loso, c_stats, c_ablate;
  int synth_subjects = 0;
  double synth_duration = 0.0;
  std::string pre_in, pt_windows, pt_exclude;
  std::string cal_ckpt, cal_windows, cal_phase = "both";
  std::string ev_ckpt, ev_windows, ev_split = "test";
  std::string loso_windows, loso_phase = "both";
  std::vector<std::string> loso_ablate;
  std::string stats_metrics, stats_summary;
  int stats_permute = 0;
  std::vector<std::string> ablate_runs;

  CLI::App* s = app.add_subcommand("synth", "generate a synthetic paired cohort");
  add_common(s, c_synth);
  s->add_option("--subjects", synth_subjects, "number of subjects (>= 2)");
  s->add_option("--duration", synth_duration, "seconds of signal per subject");

  CLI::App* p = app.add_subcommand("preprocess", "recordings -> training window caches");
  add_common(p, c_pre);
  p->add_option("--in", pre_in, "directory of recording bundles")->required();

  CLI::App* pt = app.add_subcommand("pretrain", "sequential encoder pretraining");
  add_common(pt, c_pretrain);
  pt->add_option("--windows", pt_windows, "directory of window caches")->required();
  pt->add_option("--exclude", pt_exclude, "held-out test subject to skip");

  CLI::App* ca = app.add_subcommand("calibrate", "adapt a pretrained model to one subject");
  add_common(ca, c_calib);
  ca->add_option("--checkpoint", cal_ckpt, "pretrained encoder checkpoint")->required();
  ca->add_option("--windows", cal_windows, "subject window cache base path")->required();
  ca->add_option("--phase", cal_phase, "A, B or both");

  CLI::App* ev = app.add_subcommand("evaluate", "score a checkpoint on a subject");
  add_common(ev, c_eval);
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--windows", ev_windows, "subject window cache base path")->required();
  ev->add_option("--split", ev_split, "test, calib or all");

  CLI::App* lo = app.add_subcommand("loso", "full leave-one-subject-out protocol");
  add_common(lo, c_loso);
  lo->add_option("--windows", loso_windows, "directory of window caches")->required();
  lo->add_option("--phase", loso_phase, "A, B or both");
  lo->add_option("--ablate", loso_ablate, "named ablation, e.g. scales=8 or loss=mse");

  CLI::App* st = app.add_subcommand("stats", "depth-gradient mixed-model analysis");
  add_common(st, c_stats);
  st->add_option("--metrics", stats_metrics, "channel metrics json array");
  st->add_option("--summary", stats_summary, "loso summary.json to pool");
  st->add_option("--permute", stats_permute, "permutation count for the null check");

  CLI::App* ar = app.add_subcommand("ablate-report", "compare loso summaries");
  add_common(ar, c_ablate);
  ar->add_option("--run", ablate_runs, "label=summary.json (first entry is the baseline)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_synth(c_synth, synth_subjects, synth_duration);
    if (p->parsed()) return cmd_preprocess(c_pre, pre_in);
    if (pt->parsed()) return cmd_pretrain(c_pretrain, pt_windows, pt_exclude);
    if (ca->parsed()) return cmd_calibrate(c_calib, cal_ckpt, cal_windows, cal_phase);
    if (ev->parsed()) return cmd_evaluate(c_eval, ev_ckpt, ev_windows, ev_split);
    if (lo->parsed()) return cmd_loso(c_loso, loso_windows, loso_phase, loso_ablate);
    if (st->parsed()) return cmd_stats(c_stats, stats_metrics, stats_summary, stats_permute);
    if (ar->parsed()) return cmd_ablate_report(c_ablate, ablate_runs);
  } catch (const Error& e) {
    std::cerr << "cast: " << e.what() << "\n";
    return code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "cast: unexpected: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
