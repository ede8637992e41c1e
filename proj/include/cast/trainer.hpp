#pragma once

// Leave-one-subject-out protocol.
//
// Per fold: the encoder is pretrained sequentially on every held-in subject
// (plan order, two outer loops, one pass per subject per loop, throwaway
// per-subject decoders), then the held-out subject's windows are split by
// time into a calibration prefix and a test remainder. Two calibrations
// branch from the same pretrained state: Phase A fits a fresh decoder for
// all target channels, Phase B runs a warmup in the same form, keeps the
// channels whose calibration r clears the observability threshold, and
// retrains a fresh decoder on that subset. Test windows flow only through
// SubjectView's audited accessor, so a fold report can prove they were read
// by final evaluation alone.
//
// Every random choice (init, batching, dropout, augmentation) derives from
// the plan seed through named substreams; reruns are bit-identical.

#include "cast/adam.hpp"
#include "cast/loss.hpp"
#include "cast/metrics.hpp"
#include "cast/model.hpp"
#include "cast/rng.hpp"
#include "cast/windows.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace cast {

struct AugmentConfig {
  double noise_sigma = 0.05;
  double amp_lo = 0.8;
  double amp_hi = 1.2;
  int max_shift = 20;
  double apply_prob = 0.5;

  void validate() const {
    require(noise_sigma >= 0.0, Err::config, "augment: noise_sigma must be >= 0");
    require(amp_lo > 0.0 && amp_hi >= amp_lo, Err::config, "augment: bad amplitude range");
    require(max_shift >= 0 && max_shift < kWindowLen, Err::config,
            "augment: shift must be < window length");
    require(apply_prob >= 0.0 && apply_prob <= 1.0, Err::config,
            "augment: apply_prob must lie in [0, 1]");
  }
};

namespace detail {

inline void circular_shift_cols(Matf& m, int s) {
  int t = int(m.cols());
  int k = ((s % t) + t) % t;
  if (k == 0) return;
  Matf tmp(m.rows(), t);
  tmp.rightCols(t - k) = m.leftCols(t - k);
  tmp.leftCols(k) = m.rightCols(k);
  m = tmp;
}

}  // namespace detail

// Noise and amplitude scaling perturb only the scalp input; the circular
// time shift moves input and target together, since shifting one side alone
// would corrupt the alignment being learned. No re-z-scoring afterwards.
inline void augment_inplace(WindowPair& wp, const AugmentConfig& cfg, Rng& rng) {
  if (rng.bernoulli(cfg.apply_prob) && cfg.noise_sigma > 0.0)
    for (Index i = 0; i < wp.eeg.rows(); ++i)
      for (Index j = 0; j < wp.eeg.cols(); ++j)
        wp.eeg(i, j) += float(rng.normal(0.0, cfg.noise_sigma));
  if (rng.bernoulli(cfg.apply_prob)) wp.eeg *= float(rng.uniform(cfg.amp_lo, cfg.amp_hi));
  if (rng.bernoulli(cfg.apply_prob) && cfg.max_shift > 0) {
    int s = int(rng.uniform_int(-cfg.max_shift, cfg.max_shift));
    detail::circular_shift_cols(wp.eeg, s);
    detail::circular_shift_cols(wp.ieeg, s);
  }
}

struct LosoPlan {
  std::vector<std::string> subjects;
  std::string test_subject;
  int pretrain_loops = 2;
  int pretrain_passes_per_subject = 1;
  double pretrain_lr = 3e-4;
  double calib_fraction = 0.20;
  int phaseA_epochs = 200;
  int phaseB_warmup_epochs = 50;
  double observable_threshold = kObservableR;
  double encoder_ft_lr = 3e-5;
  double decoder_lr = 3e-4;
  int batch_size = 16;
  int curve_eval_every = 10;  // 0 disables calib_r on the curve
  bool run_phase_a = true;    // produce the ALL block
  bool run_phase_b = true;    // produce the OBS block
  uint64_t seed = 0;
  AugmentConfig augment;
  LossWeights loss_weights;

  std::vector<std::string> heldin() const {
    std::vector<std::string> out;
    for (const auto& s : subjects)
      if (s != test_subject) out.push_back(s);
    return out;
  }

  void validate() const {
    require(!subjects.empty(), Err::config, "plan: no subjects");
    for (size_t i = 0; i < subjects.size(); ++i)
      for (size_t j = i + 1; j < subjects.size(); ++j)
        require(subjects[i] != subjects[j], Err::config, "plan: duplicate subject");
    require(std::find(subjects.begin(), subjects.end(), test_subject) != subjects.end(),
            Err::config, "plan: test subject not in subject list");
    require(subjects.size() >= 2, Err::config, "plan: need at least one held-in subject");
    require(pretrain_loops >= 1 && pretrain_passes_per_subject >= 1, Err::config,
            "plan: pretraining loop counts must be positive");
    require(pretrain_lr > 0.0 && encoder_ft_lr > 0.0 && decoder_lr > 0.0, Err::config,
            "plan: learning rates must be positive");
    require(calib_fraction > 0.0 && calib_fraction < 1.0, Err::config,
            "plan: calibration fraction must lie in (0, 1)");
    require(phaseA_epochs > 0 && phaseB_warmup_epochs > 0, Err::config,
            "plan: epoch counts must be positive");
    require(observable_threshold > 0.0, Err::config, "plan: observable threshold must be positive");
    require(batch_size >= 1, Err::config, "plan: batch size must be positive");
    require(curve_eval_every >= 0, Err::config, "plan: curve_eval_every must be >= 0");
    require(run_phase_a || run_phase_b, Err::config, "plan: at least one phase must run");
    require(loss_weights.mse >= 0 && loss_weights.pearson >= 0 && loss_weights.spectral >= 0 &&
                loss_weights.mse + loss_weights.pearson + loss_weights.spectral > 0,
            Err::config, "plan: loss weights must be nonnegative and not all zero");
    augment.validate();
  }
};

struct CalibrationSplit {
  WindowSet calib;
  WindowSet test;
};

// Temporal prefix split: the earliest ceil(fraction * n) windows calibrate,
// the rest are held out, mirroring a calibration session that precedes use.
inline CalibrationSplit split_calibration(const WindowSet& ws, double fraction = 0.20) {
  require(fraction > 0.0 && fraction < 1.0, Err::invalid_argument,
          "split: fraction must lie in (0, 1)");
  Index n = ws.n_windows();
  require(n >= 5, Err::insufficient_data, "split: need at least 5 windows");
  Index nc = Index(std::ceil(fraction * double(n)));
  require(nc >= 1 && nc < n, Err::insufficient_data, "split: a partition would be empty");

  CalibrationSplit out;
  for (WindowSet* part : {&out.calib, &out.test}) {
    part->source_subject = ws.source_subject;
    part->canonical_mask = ws.canonical_mask;
    part->ieeg_channels = ws.ieeg_channels;
    part->n_candidates = ws.n_candidates;
    part->n_rejected = ws.n_rejected;
  }
  for (Index i = 0; i < n; ++i) {
    WindowSet& part = i < nc ? out.calib : out.test;
    part.windows.push_back(ws.windows[size_t(i)]);
    part.window_start_samples.push_back(ws.window_start_samples[size_t(i)]);
  }
  return out;
}

struct AccessLedger {
  int calib_accesses = 0;
  int test_eval_passes = 0;
};

// Holds the split and meters every touch of the held-out windows. Training
// code receives only calib(); the test set is reachable solely through
// test_for_eval(), so the ledger count equals the number of evaluation
// passes by construction.
class SubjectView {
 public:
  SubjectView(const WindowSet& ws, double fraction) : split_(split_calibration(ws, fraction)) {}

  const WindowSet& calib() const {
    ++ledger_.calib_accesses;
    return split_.calib;
  }
  const WindowSet& test_for_eval() const {
    ++ledger_.test_eval_passes;
    return split_.test;
  }
  Index n_calib() const { return split_.calib.n_windows(); }
  Index n_test() const { return split_.test.n_windows(); }
  const AccessLedger& ledger() const { return ledger_; }

 private:
  CalibrationSplit split_;
  mutable AccessLedger ledger_;
};

struct EpochStats {
  int epoch = 0;
  double mse = 0.0;
  double pearson = 0.0;
  double spectral = 0.0;
  double total = 0.0;
  double calib_r = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Rows of model target channels inside a window set's ieeg block.
inline std::vector<Index> target_rows(const CastModel<float>& model, const WindowSet& data) {
  std::vector<Index> rows;
  for (const auto& name : model.channels()) {
    Index found = -1;
    for (Index i = 0; i < data.n_ieeg(); ++i)
      if (data.ieeg_channels[size_t(i)].name == name) found = i;
    require(found >= 0, Err::index, "trainer: model channel '" + name + "' missing from data");
    rows.push_back(found);
  }
  return rows;
}

inline double row_pearson(const Matf& a, Index i, const Matf& b, Index j) {
  Vecd x = a.row(i).cast<double>().transpose();
  Vecd y = b.row(j).cast<double>().transpose();
  x.array() -= x.mean();
  y.array() -= y.mean();
  double den = x.norm() * y.norm();
  return den > 1e-30 ? x.dot(y) / den : 0.0;
}

inline constexpr uint64_t kAugmentStride = 1ull << 20;

struct TrainSettings {
  int epochs = 0;
  double encoder_scale = 1.0;  // multiplier on the base (decoder) lr
  bool augment = true;
  int eval_every = 0;
  std::string stream_tag;
};

inline std::vector<double> channel_calibration_r(CastModel<float>& model, const WindowSet& data,
                                                 int batch_size);

// Shared epoch loop for pretraining passes and both calibration phases.
inline std::vector<EpochStats> run_training(CastModel<float>& model, const WindowSet& data,
                                            const LosoPlan& plan, const TrainSettings& s) {
  require(data.n_windows() >= 1, Err::insufficient_data, "trainer: no windows to train on");
  require(Index(kMontageSize) == model.config().c_eeg, Err::dimension_mismatch,
          "trainer: model input width disagrees with the canonical montage");
  std::vector<Index> rows = target_rows(model, data);

  nn::Adam<float> opt(model.params());
  opt.set_lr_scale("enc.", s.encoder_scale);
  opt.set_lr_scale("embed.", s.encoder_scale);

  Rng root = Rng(plan.seed).stream(s.stream_tag);
  Index n = data.n_windows(), C = model.n_channels();
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));

  std::vector<EpochStats> curve;
  Matf eeg, tgt;
  for (int e = 0; e < s.epochs; ++e) {
    Rng shuffle_rng = root.stream("batch", uint64_t(e));
    shuffle_rng.shuffle(order);
    Rng dropout_rng = root.stream("dropout", uint64_t(e));

    EpochStats st;
    st.epoch = e + 1;
    for (Index at = 0; at < n; at += plan.batch_size) {
      Index b = std::min<Index>(plan.batch_size, n - at);
      eeg.resize(b * kMontageSize, kWindowLen);
      tgt.resize(b * C, kWindowLen);
      for (Index k = 0; k < b; ++k) {
        Index widx = order[size_t(at + k)];
        WindowPair wp = data.windows[size_t(widx)];
        if (s.augment) {
          Rng ar = root.stream("augment", uint64_t(e) * kAugmentStride + uint64_t(widx));
          augment_inplace(wp, plan.augment, ar);
        }
        eeg.middleRows(k * kMontageSize, kMontageSize) = wp.eeg;
        for (Index c = 0; c < C; ++c) tgt.row(k * C + c) = wp.ieeg.row(rows[size_t(c)]);
      }

      ForwardCtx ctx{true, &dropout_rng};
      const Matf& pred = model.forward(eeg, b, ctx);
      Matf grad;
      LossBreakdown l = composite_loss(pred, tgt, plan.loss_weights, &grad);
      require(std::isfinite(l.total), Err::numeric,
              "trainer: non-finite loss (" + s.stream_tag + ", epoch " + std::to_string(e + 1) +
                  ", batch at window " + std::to_string(at) + ")");
      model.params().zero_grads();
      model.backward(grad);
      opt.step(model.params(), plan.decoder_lr);

      double w = double(b) / double(n);
      st.mse += w * l.mse;
      st.pearson += w * l.pearson;
      st.spectral += w * l.spectral;
      st.total += w * l.total;
    }
    if (s.eval_every > 0 && ((e + 1) % s.eval_every == 0 || e + 1 == s.epochs)) {
      auto r = channel_calibration_r(model, data, plan.batch_size);
      st.calib_r = std::accumulate(r.begin(), r.end(), 0.0) / double(r.size());
    }
    curve.push_back(st);
  }
  return curve;
}

// Per-channel mean window r on un-augmented data, eval mode.
inline std::vector<double> channel_calibration_r(CastModel<float>& model, const WindowSet& data,
                                                 int batch_size) {
  require(data.n_windows() >= 1, Err::insufficient_data, "trainer: no windows to score");
  std::vector<Index> rows = target_rows(model, data);
  Index n = data.n_windows(), C = model.n_channels();
  std::vector<double> acc(size_t(C), 0.0);
  Matf eeg;
  for (Index at = 0; at < n; at += batch_size) {
    Index b = std::min<Index>(Index(batch_size), n - at);
    eeg.resize(b * kMontageSize, kWindowLen);
    for (Index k = 0; k < b; ++k)
      eeg.middleRows(k * kMontageSize, kMontageSize) = data.windows[size_t(at + k)].eeg;
    ForwardCtx ctx;
    const Matf& pred = model.forward(eeg, b, ctx);
    for (Index k = 0; k < b; ++k) {
      const Matf& ieeg = data.windows[size_t(at + k)].ieeg;
      for (Index c = 0; c < C; ++c)
        acc[size_t(c)] += row_pearson(pred, k * C + c, ieeg, rows[size_t(c)]);
    }
  }
  for (auto& v : acc) v /= double(n);
  return acc;
}

inline std::vector<std::string> channel_names(const WindowSet& ws) {
  std::vector<std::string> names;
  for (const auto& c : ws.ieeg_channels) names.push_back(c.name);
  return names;
}

}  // namespace detail

struct PretrainReport {
  std::vector<std::string> trace;  // subject visit order, plan order repeated per loop
  std::vector<std::vector<EpochStats>> curves;
};

// Sequential encoder pretraining. Each visit swaps in a freshly initialized
// decoder for that subject's channels (discarded at the end of the visit)
// and runs the shared loop with every parameter at the pretraining lr.
inline PretrainReport pretrain_encoder(CastModel<float>& model,
                                       const std::vector<const WindowSet*>& heldin,
                                       const LosoPlan& plan) {
  require(!heldin.empty(), Err::insufficient_data, "pretrain: no held-in subjects");
  for (const auto* ws : heldin)
    require(ws->n_windows() > 0, Err::insufficient_data,
            "pretrain: subject '" + ws->source_subject + "' has no windows");

  Rng root(plan.seed);
  PretrainReport report;
  for (int loop = 0; loop < plan.pretrain_loops; ++loop) {
    for (size_t si = 0; si < heldin.size(); ++si) {
      const WindowSet& ws = *heldin[si];
      uint64_t visit = uint64_t(loop) * heldin.size() + si;
      model.resize_decoder(detail::channel_names(ws), DecoderResize::fresh,
                           root.stream("pretrain.decoder", visit).seed());
      detail::TrainSettings s;
      s.epochs = plan.pretrain_passes_per_subject;
      s.encoder_scale = 1.0;
      s.augment = true;
      s.eval_every = 0;
      s.stream_tag = "pretrain.v" + std::to_string(visit);

      LosoPlan p = plan;
      p.decoder_lr = plan.pretrain_lr;  // one lr for everything here
      report.trace.push_back(ws.source_subject);
      report.curves.push_back(detail::run_training(model, ws, p, s));
    }
  }
  return report;
}

// Phase A: fresh decoder over every target channel, long calibration with
// the encoder trailing at its fine-tune lr.
inline std::vector<EpochStats> calibrate_phaseA(CastModel<float>& model, const WindowSet& calib,
                                                const LosoPlan& plan) {
  model.resize_decoder(detail::channel_names(calib), DecoderResize::fresh,
                       Rng(plan.seed).stream("phaseA.decoder").seed());
  detail::TrainSettings s;
  s.epochs = plan.phaseA_epochs;
  s.encoder_scale = plan.encoder_ft_lr / plan.decoder_lr;
  s.augment = true;
  s.eval_every = plan.curve_eval_every;
  s.stream_tag = "phaseA";
  return detail::run_training(model, calib, plan, s);
}

struct PhaseBResult {
  std::vector<double> warmup_r;           // per calib channel, model order at warmup end
  std::vector<std::string> observable;    // names with warmup_r >= threshold
  bool trained = false;                   // false iff the observable set came up empty
  std::vector<EpochStats> warmup_curve;
  std::vector<EpochStats> train_curve;
};

// Phase B: warmup identical in form to Phase A, then keep only channels
// whose un-augmented calibration r clears the threshold (inclusive) and
// train a fresh decoder for that subset. The warmed encoder is kept; it has
// seen nothing but calibration data. An empty subset is a reported status.
inline PhaseBResult calibrate_phaseB(CastModel<float>& model, const WindowSet& calib,
                                     const LosoPlan& plan) {
  Rng root(plan.seed);
  model.resize_decoder(detail::channel_names(calib), DecoderResize::fresh,
                       root.stream("phaseB.warmup_decoder").seed());
  detail::TrainSettings warm;
  warm.epochs = plan.phaseB_warmup_epochs;
  warm.encoder_scale = plan.encoder_ft_lr / plan.decoder_lr;
  warm.augment = true;
  warm.eval_every = plan.curve_eval_every;
  warm.stream_tag = "phaseB.warmup";

  PhaseBResult out;
  out.warmup_curve = detail::run_training(model, calib, plan, warm);
  out.warmup_r = detail::channel_calibration_r(model, calib, plan.batch_size);
  for (size_t i = 0; i < out.warmup_r.size(); ++i)
    if (out.warmup_r[i] >= plan.observable_threshold)
      out.observable.push_back(model.channels()[i]);
  if (out.observable.empty()) return out;

  model.resize_decoder(out.observable, DecoderResize::fresh,
                       root.stream("phaseB.decoder").seed());
  detail::TrainSettings fit = warm;
  fit.epochs = plan.phaseA_epochs;
  fit.stream_tag = "phaseB.train";
  out.train_curve = detail::run_training(model, calib, plan, fit);
  out.trained = true;
  return out;
}

// Stacks per-channel predictions over the given windows and scores them.
inline std::vector<ChannelMetrics> evaluate_model(CastModel<float>& model, const WindowSet& data,
                                                  int batch_size = 16) {
  require(data.n_windows() >= 1, Err::empty_result, "evaluate: no windows");
  std::vector<Index> rows = detail::target_rows(model, data);
  Index n = data.n_windows(), C = model.n_channels();
  std::vector<Matf> pred(size_t(C), Matf(n, kWindowLen));
  std::vector<Matf> target(size_t(C), Matf(n, kWindowLen));
  Matf eeg;
  for (Index at = 0; at < n; at += batch_size) {
    Index b = std::min<Index>(Index(batch_size), n - at);
    eeg.resize(b * kMontageSize, kWindowLen);
    for (Index k = 0; k < b; ++k)
      eeg.middleRows(k * kMontageSize, kMontageSize) = data.windows[size_t(at + k)].eeg;
    ForwardCtx ctx;
    const Matf& out = model.forward(eeg, b, ctx);
    for (Index k = 0; k < b; ++k)
      for (Index c = 0; c < C; ++c) {
        pred[size_t(c)].row(at + k) = out.row(k * C + c);
        target[size_t(c)].row(at + k) = data.windows[size_t(at + k)].ieeg.row(rows[size_t(c)]);
      }
  }
  std::vector<ChannelMetrics> metrics;
  for (Index c = 0; c < C; ++c) {
    ChannelMetrics m = channel_metrics(pred[size_t(c)], target[size_t(c)]);
    const ChannelMeta& meta = data.ieeg_channels[size_t(rows[size_t(c)])];
    m.channel = meta.name;
    m.subject = data.source_subject;
    m.region = meta.region;
    m.depth = meta.depth;
    metrics.push_back(std::move(m));
  }
  return metrics;
}

struct FoldReport {
  std::string test_subject;
  bool excluded = false;
  std::string exclusion_reason;
  int n_calib = 0;
  int n_test = 0;
  std::vector<std::string> pretrain_trace;
  std::vector<std::vector<EpochStats>> pretrain_curves;
  std::vector<EpochStats> phaseA_curve;
  PhaseBResult phaseB;
  std::vector<ChannelMetrics> metrics_all;  // Phase-A model on test windows
  std::vector<ChannelMetrics> metrics_obs;  // Phase-B model, observable subset
  AccessLedger ledger;
};

// One fold. Phase A and Phase B both branch from the pretrained state. All
// training finishes before the held-out windows are touched: the test set
// is read through the audited accessor exactly once and both phase models
// are evaluated against that single view. The ALL-block metrics carry the
// calibration-derived observability mask so downstream viability counts use
// the operative Phase-B definition.
inline FoldReport run_fold(const std::vector<const WindowSet*>& heldin, const WindowSet& test_ws,
                           const CastConfig& cfg, const LosoPlan& plan) {
  plan.validate();
  FoldReport fold;
  fold.test_subject = test_ws.source_subject;
  try {
    SubjectView view(test_ws, plan.calib_fraction);
    fold.n_calib = int(view.n_calib());
    fold.n_test = int(view.n_test());

    CastModel<float> model(cfg, detail::channel_names(*heldin.front()), plan.seed);
    PretrainReport pre = pretrain_encoder(model, heldin, plan);
    fold.pretrain_trace = std::move(pre.trace);
    fold.pretrain_curves = std::move(pre.curves);

    std::optional<CastModel<float>> modelA, modelB;
    if (plan.run_phase_a) {
      modelA.emplace(model.clone());
      fold.phaseA_curve = calibrate_phaseA(*modelA, view.calib(), plan);
    }
    if (plan.run_phase_b) {
      modelB.emplace(model.clone());
      fold.phaseB = calibrate_phaseB(*modelB, view.calib(), plan);
    }

    const WindowSet& test = view.test_for_eval();
    if (modelA) fold.metrics_all = evaluate_model(*modelA, test, plan.batch_size);
    if (modelB && fold.phaseB.trained)
      fold.metrics_obs = evaluate_model(*modelB, test, plan.batch_size);

    if (plan.run_phase_b)
      for (auto& m : fold.metrics_all)
        m.observable = std::find(fold.phaseB.observable.begin(), fold.phaseB.observable.end(),
                                 m.channel) != fold.phaseB.observable.end();
    fold.ledger = view.ledger();
  } catch (const Error& e) {
    if (e.code() != Err::insufficient_data) throw;
    fold.excluded = true;
    fold.exclusion_reason = e.what();
  }
  return fold;
}

struct LosoReport {
  std::vector<FoldReport> folds;
};

inline LosoReport run_loso(const std::vector<const WindowSet*>& cohort, const CastConfig& cfg,
                           LosoPlan plan) {
  require(cohort.size() >= 2, Err::insufficient_data, "loso: need at least two subjects");
  if (plan.subjects.empty())
    for (const auto* ws : cohort) plan.subjects.push_back(ws->source_subject);

  LosoReport report;
  for (const auto& name : plan.subjects) {
    LosoPlan fold_plan = plan;
    fold_plan.test_subject = name;
    fold_plan.validate();

    const WindowSet* test_ws = nullptr;
    std::vector<const WindowSet*> heldin;
    for (const auto& hn : fold_plan.heldin())
      for (const auto* ws : cohort)
        if (ws->source_subject == hn) heldin.push_back(ws);
    for (const auto* ws : cohort)
      if (ws->source_subject == name) test_ws = ws;
    require(test_ws != nullptr && heldin.size() + 1 == plan.subjects.size(), Err::index,
            "loso: subject list does not match the cohort");

    report.folds.push_back(run_fold(heldin, *test_ws, cfg, fold_plan));
  }
  return report;
}

}  // namespace cast
