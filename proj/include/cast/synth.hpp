#pragma once

// Synthetic paired scalp/depth data with known physics. Independent
// band-limited sources sit at known depths; each source couples to the
// scalp through a positive mixing column of unit norm scaled by an
// exponential depth falloff, so a source's scalp footprint shrinks as
// exp(-depth / lambda). Depth contacts record the sources themselves plus
// a little noise. Because the mixing is known exactly, recoverability can
// be bounded from the outside (e.g. by ridge regression) and any learned
// reconstruction must reproduce the same depth ordering.

#include "cast/common.hpp"
#include "cast/dsp.hpp"
#include "cast/recording.hpp"
#include "cast/rng.hpp"
#include "cast/windows.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace cast::synth {

struct BandSpec {
  double center_hz = 10.0;
  double width_hz = 4.0;
  double weight = 1.0;
};

inline std::vector<BandSpec> default_bands() {
  return {{6.0, 3.0, 1.0}, {10.0, 4.0, 1.0}, {22.0, 12.0, 0.7}};
}

struct SubjectSpec {
  int n_eeg = 19;
  std::vector<double> source_depth_mm;  // one depth contact per source
  double gain0 = 1.0;
  double lambda_mm = 12.0;
  double sensor_noise_sd = 0.05;
  double depth_noise_sd = 0.02;
  double pink_weight = 0.3;
  std::vector<BandSpec> bands = default_bands();

  void validate() const {
    require(n_eeg >= 1 && n_eeg <= kMontageSize, Err::config,
            "synth: n_eeg must lie in [1, 21]");
    require(!source_depth_mm.empty(), Err::config, "synth: need at least one source");
    for (double d : source_depth_mm)
      require(d > 0.0 && d < 100.0, Err::config, "synth: depths must lie in (0, 100) mm");
    require(gain0 > 0.0 && lambda_mm > 0.0, Err::config, "synth: gain0 and lambda must be positive");
    require(sensor_noise_sd >= 0.0 && depth_noise_sd >= 0.0, Err::config,
            "synth: noise sds must be nonnegative");
    require(!bands.empty(), Err::config, "synth: need at least one band");
  }
};

// Standard contact layout: 6 superficial, 6 intermediate, 8 deep.
inline std::vector<double> default_depths() {
  return {4, 6, 8, 9, 10, 12, 18, 20, 22, 24, 26, 28, 35, 38, 42, 46, 50, 55, 48, 52};
}

inline double depth_gain(double depth_mm, double gain0, double lambda_mm) {
  return gain0 * std::exp(-depth_mm / lambda_mm);
}

inline Depth depth_bucket(double depth_mm) {
  if (depth_mm < 15.0) return Depth::cortical;
  if (depth_mm <= 30.0) return Depth::mid;
  return Depth::deep;
}

inline const char* region_for(Depth d) {
  switch (d) {
    case Depth::cortical: return "lateral";
    case Depth::mid: return "intermediate";
    default: return "mesial";
  }
}

// Positive coupling columns, one per source: unit norm, then scaled by the
// source's depth gain, so each column's norm equals its gain exactly.
inline Matd make_leadfield(const SubjectSpec& spec, Rng rng) {
  spec.validate();
  Index e = spec.n_eeg, s = Index(spec.source_depth_mm.size());
  Matd L(e, s);
  for (Index j = 0; j < s; ++j) {
    for (Index i = 0; i < e; ++i) L(i, j) = rng.uniform(0.2, 1.0);
    L.col(j) *= depth_gain(spec.source_depth_mm[size_t(j)], spec.gain0, spec.lambda_mm) /
                L.col(j).norm();
  }
  return L;
}

namespace detail {

// Paul Kellet's pink noise filter over white gaussian input.
inline Vecd pink_noise(Index n, Rng& rng) {
  Vecd out(n);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (Index i = 0; i < n; ++i) {
    double w = rng.normal();
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    out[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  return out;
}

inline Vecd standardized(Vecd v) {
  double mean = v.mean();
  v.array() -= mean;
  double sd = std::sqrt(v.array().square().mean());
  require(sd > 1e-12, Err::numeric, "synth: degenerate source signal");
  return v / sd;
}

}  // namespace detail

// Unit-variance sources: each is a random two-band mixture plus a pink
// noise floor, standardized exactly.
inline Matd make_sources(const SubjectSpec& spec, Index n_samples, double fs_hz, Rng rng) {
  spec.validate();
  require(n_samples >= 1000, Err::invalid_argument, "synth: need at least 1000 samples");
  Index s = Index(spec.source_depth_mm.size());
  Matd Y(s, n_samples);
  for (Index j = 0; j < s; ++j) {
    Rng sr = rng.stream("source", uint64_t(j));
    Vecd mix = Vecd::Zero(n_samples);
    Index nb = Index(spec.bands.size());
    Index first = Index(sr.uniform_int(0, nb - 1));
    Index second = nb > 1 ? (first + 1 + Index(sr.uniform_int(0, nb - 2))) % nb : first;
    for (Index bi : {first, second}) {
      const BandSpec& band = spec.bands[size_t(bi)];
      double lo = std::max(0.3, band.center_hz - band.width_hz / 2.0);
      double hi = std::min(fs_hz / 2.0 - 1.0, band.center_hz + band.width_hz / 2.0);
      Matd white(1, n_samples);
      for (Index t = 0; t < n_samples; ++t) white(0, t) = sr.normal();
      Matd shaped = dsp::bandpass_filter(white, fs_hz, lo, hi);
      mix += sr.uniform(0.5, 1.0) * band.weight * detail::standardized(shaped.row(0).transpose());
      if (nb == 1) break;
    }
    if (spec.pink_weight > 0.0)
      mix += spec.pink_weight * detail::standardized(detail::pink_noise(n_samples, sr));
    Y.row(j) = detail::standardized(mix).transpose();
  }
  return Y;
}

struct SyntheticSubject {
  Recording recording;  // scalp plus depth channels, 200 Hz
  Matd leadfield;
  std::vector<double> depths_mm;
  std::vector<int> slots;
  uint64_t seed = 0;
};

inline SyntheticSubject make_subject(const SubjectSpec& spec, const std::string& subject_id,
                                     double duration_s, uint64_t seed) {
  spec.validate();
  require(duration_s >= 5.0, Err::invalid_argument, "synth: duration must be >= 5 s");
  const double fs = kWindowRateHz;
  Index n = Index(std::llround(duration_s * fs));
  Rng root(seed);

  SyntheticSubject out;
  out.seed = seed;
  out.depths_mm = spec.source_depth_mm;
  out.leadfield = make_leadfield(spec, root.stream("leadfield"));
  Matd Y = make_sources(spec, n, fs, root.stream("sources"));

  std::vector<int> slots(kMontageSize);
  std::iota(slots.begin(), slots.end(), 0);
  Rng mr = root.stream("montage");
  mr.shuffle(slots);
  slots.resize(size_t(spec.n_eeg));
  std::sort(slots.begin(), slots.end());
  out.slots = slots;

  Index e = spec.n_eeg, s = Index(spec.source_depth_mm.size());
  Recording rec;
  rec.subject_id = subject_id;
  rec.sample_rate_hz = fs;
  rec.data.resize(e + s, n);
  rec.data.topRows(e).noalias() = out.leadfield * Y;
  Rng nr = root.stream("sensor_noise");
  if (spec.sensor_noise_sd > 0.0)
    for (Index i = 0; i < e; ++i)
      for (Index t = 0; t < n; ++t) rec.data(i, t) += spec.sensor_noise_sd * nr.normal();

  rec.data.bottomRows(s) = Y;
  Rng dr = root.stream("depth_noise");
  if (spec.depth_noise_sd > 0.0)
    for (Index j = 0; j < s; ++j)
      for (Index t = 0; t < n; ++t) rec.data(e + j, t) += spec.depth_noise_sd * dr.normal();

  for (int slot : slots) {
    ChannelMeta c;
    c.name = canonical_montage()[size_t(slot)];
    c.role = ChannelRole::scalp_eeg;
    c.montage_slot = slot;
    rec.channels.push_back(c);
  }
  for (Index j = 0; j < s; ++j) {
    ChannelMeta c;
    char buf[8];
    std::snprintf(buf, sizeof buf, "D%02ld", long(j) + 1);
    c.name = buf;
    c.role = ChannelRole::ieeg;
    c.depth = depth_bucket(spec.source_depth_mm[size_t(j)]);
    c.region = region_for(c.depth);
    rec.channels.push_back(c);
  }
  rec.validate();
  out.recording = std::move(rec);
  return out;
}

struct CohortSpec {
  int n_subjects = 4;
  double duration_s = 60.0;
  SubjectSpec subject;

  CohortSpec() { subject.source_depth_mm = default_depths(); }
};

inline std::vector<SyntheticSubject> make_cohort(const CohortSpec& spec, uint64_t seed) {
  require(spec.n_subjects >= 1, Err::config, "synth: need at least one subject");
  Rng root(seed);
  std::vector<SyntheticSubject> out;
  for (int i = 0; i < spec.n_subjects; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "synth-%02d", i + 1);
    out.push_back(make_subject(spec.subject, buf, spec.duration_s,
                               root.stream("subject", uint64_t(i)).seed()));
  }
  return out;
}

// Upper-bound style linear baseline: ridge regression from scalp rows to
// each source on the first half, Pearson r on the second half.
inline Vecd ridge_profile(const SyntheticSubject& subj, double alpha = 1.0) {
  const Recording& rec = subj.recording;
  Index e = 0;
  for (const auto& c : rec.channels) e += c.role == ChannelRole::scalp_eeg;
  Index s = rec.n_channels() - e;
  Index n = rec.n_samples(), half = n / 2;

  Matd X = rec.data.topRows(e);
  Matd Y = rec.data.bottomRows(s);
  Matd Xtr = X.leftCols(half), Xte = X.rightCols(n - half);
  Matd Ytr = Y.leftCols(half), Yte = Y.rightCols(n - half);

  Matd G = Xtr * Xtr.transpose();
  G.diagonal().array() += alpha * G.trace() / double(e);
  Matd W = Ytr * Xtr.transpose() * G.llt().solve(Matd::Identity(e, e));

  Matd pred = W * Xte;
  Vecd r(s);
  for (Index j = 0; j < s; ++j) {
    Vecd a = pred.row(j).transpose(), b = Yte.row(j).transpose();
    a.array() -= a.mean();
    b.array() -= b.mean();
    double den = a.norm() * b.norm();
    r[j] = den > 1e-30 ? a.dot(b) / den : 0.0;
  }
  return r;
}

}  // namespace cast::synth
