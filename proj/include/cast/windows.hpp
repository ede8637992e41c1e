#pragma once

// Turns a recording into paired training windows: fixed 2 s slices at 200 Hz
// with 50% overlap, z-scored per channel per window, rejected outright when
// any sample exceeds 5 standard deviations. Scalp channels are scattered
// into the fixed 21-row canonical layout (absent rows stay zero) so the
// model input shape is identical across subjects.

#include "cast/common.hpp"
#include "cast/dsp.hpp"
#include "cast/recording.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace cast {

inline constexpr Index kWindowLen = 400;
inline constexpr Index kWindowStride = 200;
inline constexpr double kWindowRateHz = 200.0;
inline constexpr double kArtifactZ = 5.0;

// Per-row standardization with population variance; constant rows become
// zeros rather than NaN.
template <class S>
Mat<S> zscore_rows(const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    Vecd row = x.row(r).template cast<double>();
    double mean = row.mean();
    double var = (row.array() - mean).square().mean();
    double sd = std::sqrt(var);
    if (sd < 1e-30) {
      out.row(r).setZero();
    } else {
      out.row(r) = ((row.array() - mean) / sd).template cast<S>();
    }
  }
  return out;
}

struct WindowPair {
  Matf eeg;   // kMontageSize x kWindowLen, canonical layout
  Matf ieeg;  // depth channels x kWindowLen
};

struct WindowSet {
  std::string source_subject;
  std::array<bool, kMontageSize> canonical_mask{};  // which scalp rows are real
  std::vector<ChannelMeta> ieeg_channels;
  std::vector<WindowPair> windows;
  std::vector<Index> window_start_samples;
  Index n_candidates = 0;
  Index n_rejected = 0;

  Index n_windows() const { return Index(windows.size()); }
  Index n_ieeg() const { return Index(ieeg_channels.size()); }
};

inline WindowSet make_windows(const Recording& rec) {
  rec.validate();
  require(std::abs(rec.sample_rate_hz - kWindowRateHz) < 1e-6, Err::invalid_argument,
          "make_windows: recording must be at 200 Hz");

  std::vector<Index> scalp, depthch;
  for (Index c = 0; c < rec.n_channels(); ++c) {
    if (rec.channels[size_t(c)].role == ChannelRole::scalp_eeg) scalp.push_back(c);
    if (rec.channels[size_t(c)].role == ChannelRole::ieeg) depthch.push_back(c);
  }
  require(!scalp.empty(), Err::invalid_argument, "make_windows: no scalp channels");
  require(!depthch.empty(), Err::invalid_argument, "make_windows: no depth channels");

  WindowSet ws;
  ws.source_subject = rec.subject_id;
  for (Index c : scalp) ws.canonical_mask[size_t(*rec.channels[size_t(c)].montage_slot)] = true;
  for (Index c : depthch) ws.ieeg_channels.push_back(rec.channels[size_t(c)]);

  std::vector<Index> seg_starts{0};
  for (Index b : rec.segment_boundaries) seg_starts.push_back(b);
  seg_starts.push_back(rec.n_samples());

  for (size_t s = 0; s + 1 < seg_starts.size(); ++s) {
    for (Index t = seg_starts[s]; t + kWindowLen <= seg_starts[s + 1]; t += kWindowStride) {
      ++ws.n_candidates;
      Matf raw_eeg(Index(scalp.size()), kWindowLen);
      for (Index i = 0; i < Index(scalp.size()); ++i)
        raw_eeg.row(i) = rec.data.block(scalp[size_t(i)], t, 1, kWindowLen).cast<float>();
      Matf z_eeg = zscore_rows(raw_eeg);

      Matf raw_ieeg(Index(depthch.size()), kWindowLen);
      for (Index i = 0; i < Index(depthch.size()); ++i)
        raw_ieeg.row(i) = rec.data.block(depthch[size_t(i)], t, 1, kWindowLen).cast<float>();
      Matf z_ieeg = zscore_rows(raw_ieeg);

      if (z_eeg.cwiseAbs().maxCoeff() > kArtifactZ || z_ieeg.cwiseAbs().maxCoeff() > kArtifactZ) {
        ++ws.n_rejected;
        continue;
      }

      WindowPair wp;
      wp.eeg = Matf::Zero(kMontageSize, kWindowLen);
      for (Index i = 0; i < Index(scalp.size()); ++i)
        wp.eeg.row(*rec.channels[size_t(scalp[size_t(i)])].montage_slot) = z_eeg.row(i);
      wp.ieeg = std::move(z_ieeg);
      ws.windows.push_back(std::move(wp));
      ws.window_start_samples.push_back(t);
    }
  }

  require(!ws.windows.empty(), Err::empty_result,
          "make_windows: no window survived (candidates=" + std::to_string(ws.n_candidates) +
              ", rejected=" + std::to_string(ws.n_rejected) + ")");
  return ws;
}

struct PreprocessConfig {
  double resample_to_hz = kWindowRateHz;
  bool notch = false;
  double notch_hz = 50.0;
  double notch_width_hz = 4.0;
  bool bandpass = false;
  double bandpass_lo_hz = 0.5;
  double bandpass_hi_hz = 99.0;
};

// Resample (segment boundaries rescaled to the new rate), then optional
// notch and band-pass, all zero phase.
inline Recording preprocess(const Recording& rec, const PreprocessConfig& cfg) {
  rec.validate();
  require(cfg.resample_to_hz > 0.0, Err::config, "preprocess: target rate must be positive");
  Recording out = rec;
  if (rec.sample_rate_hz != cfg.resample_to_hz) {
    double ratio = cfg.resample_to_hz / rec.sample_rate_hz;
    out.data = dsp::resample(rec.data, rec.sample_rate_hz, cfg.resample_to_hz);
    out.sample_rate_hz = cfg.resample_to_hz;
    out.segment_boundaries.clear();
    Index n = out.data.cols();
    Index prev = 0;
    for (Index b : rec.segment_boundaries) {
      Index nb = Index(std::llround(double(b) * ratio));
      if (nb > prev && nb < n) {
        out.segment_boundaries.push_back(nb);
        prev = nb;
      }
    }
  }
  if (cfg.notch)
    out.data = dsp::notch_filter(out.data, out.sample_rate_hz, cfg.notch_hz, cfg.notch_width_hz);
  if (cfg.bandpass)
    out.data = dsp::bandpass_filter(out.data, out.sample_rate_hz, cfg.bandpass_lo_hz, cfg.bandpass_hi_hz);
  out.validate();
  return out;
}

}  // namespace cast
