#pragma once

// Offline signal conditioning: rational-rate resampling, notch and band-pass
// filtering. Filters are Butterworth designs built over zeros/poles/gain,
// discretized with the bilinear transform, factored into second-order
// sections and applied forward-backward so the net result is zero phase.
// All internal arithmetic is double regardless of the signal scalar.

#include "cast/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <vector>

namespace cast::dsp {

using cd = std::complex<double>;

// ---------------------------------------------------------------------------
// rational approximation (continued fractions)

struct Ratio {
  int64_t num = 0;
  int64_t den = 1;
};

inline Ratio rational_approx(double x, int64_t max_den) {
  require(x > 0.0 && std::isfinite(x), Err::invalid_argument, "rational_approx: x must be finite and positive");
  require(max_den >= 1, Err::invalid_argument, "rational_approx: max_den must be >= 1");
  int64_t h0 = 0, h1 = 1;  // numerator convergents
  int64_t k0 = 1, k1 = 0;  // denominator convergents
  double r = x;
  for (int it = 0; it < 64; ++it) {
    double fa = std::floor(r);
    if (fa > 9e17) break;
    int64_t a = int64_t(fa);
    int64_t h2 = a * h1 + h0;
    int64_t k2 = a * k1 + k0;
    if (k2 > max_den) break;
    h0 = h1; h1 = h2;
    k0 = k1; k1 = k2;
    double frac = r - fa;
    if (frac < 1e-12) break;
    r = 1.0 / frac;
  }
  if (k1 == 0) return {1, 1};
  return {h1, k1};
}

// ---------------------------------------------------------------------------
// polyphase resampler

inline constexpr int kResampleLobes = 10;  // sinc half-width in zero crossings

namespace detail {

inline int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
inline int64_t ceil_div(int64_t a, int64_t b) { return -floor_div(-a, b); }

inline double sinc(double u) {
  if (std::abs(u) < 1e-12) return 1.0;
  double p = M_PI * u;
  return std::sin(p) / p;
}

// Windowed-sinc interpolation kernel on the L-upsampled grid, cutoff at the
// narrower of the input and output Nyquist rates.
inline std::vector<double> resample_kernel(int64_t L, int64_t M, int64_t& half) {
  int64_t K = std::max(L, M);
  half = kResampleLobes * K;
  std::vector<double> h(size_t(2 * half + 1));
  double n2 = double(2 * half);
  for (int64_t m = 0; m <= 2 * half; ++m) {
    double u = double(m) / n2;
    double w = 0.42 - 0.5 * std::cos(2.0 * M_PI * u) + 0.08 * std::cos(4.0 * M_PI * u);
    h[size_t(m)] = w * sinc(double(m - half) / double(K));
  }
  return h;
}

inline Vecd resample_row(const Vecd& x, int64_t L, int64_t M) {
  int64_t n = x.size();
  int64_t half = 0;
  std::vector<double> h = resample_kernel(L, M, half);

  // Per-phase kernel mass; dividing by it makes constants resample exactly.
  std::vector<double> phase_sum(size_t(L), 0.0);
  for (int64_t m = 0; m <= 2 * half; ++m) phase_sum[size_t(m % L)] += h[size_t(m)];

  int64_t n_out = ceil_div(n * L, M);
  Vecd y(n_out);
  for (int64_t j = 0; j < n_out; ++j) {
    int64_t t = j * M;  // output position on the upsampled grid
    int64_t n_min = ceil_div(t - half, L);
    int64_t n_max = floor_div(t + half, L);
    double acc = 0.0;
    for (int64_t k = std::max<int64_t>(0, n_min); k <= std::min(n - 1, n_max); ++k)
      acc += x[k] * h[size_t(t - k * L + half)];
    double denom = phase_sum[size_t((t + half) % L)];
    y[j] = acc / denom;
  }
  return y;
}

}  // namespace detail

template <class S>
Mat<S> resample(const Mat<S>& x, double from_hz, double to_hz) {
  require(from_hz > 0.0 && to_hz > 0.0, Err::invalid_argument, "resample: rates must be positive");
  require(x.cols() >= 8, Err::invalid_argument, "resample: need at least 8 samples");
  if (from_hz == to_hz) return x;
  Ratio r = rational_approx(to_hz / from_hz, 1024);
  if (r.num == r.den) return x;
  Vecd row(x.cols());
  Mat<S> out;
  for (Index c = 0; c < x.rows(); ++c) {
    row = x.row(c).template cast<double>();
    Vecd y = detail::resample_row(row, r.num, r.den);
    if (c == 0) out.resize(x.rows(), y.size());
    out.row(c) = y.template cast<S>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Butterworth design over zeros/poles/gain

struct Zpk {
  std::vector<cd> z;
  std::vector<cd> p;
  double k = 1.0;
};

// Analog low-pass prototype, cutoff 1 rad/s, unity DC gain.
inline Zpk butter_prototype(int order) {
  require(order >= 1, Err::invalid_argument, "butter_prototype: order must be >= 1");
  Zpk out;
  out.p.reserve(size_t(order));
  for (int i = 0; i < order; ++i) {
    double theta = M_PI * double(2 * i + order + 1) / double(2 * order);
    out.p.emplace_back(std::cos(theta), std::sin(theta));
  }
  out.k = 1.0;
  return out;
}

inline Zpk lp2bp(const Zpk& lp, double wo, double bw) {
  Zpk out;
  auto shift = [&](const std::vector<cd>& roots, std::vector<cd>& dst) {
    for (cd r : roots) {
      cd s = r * (bw / 2.0);
      cd d = std::sqrt(s * s - wo * wo);
      dst.push_back(s + d);
      dst.push_back(s - d);
    }
  };
  shift(lp.z, out.z);
  shift(lp.p, out.p);
  int degree = int(lp.p.size()) - int(lp.z.size());
  require(degree >= 0, Err::invalid_argument, "lp2bp: more zeros than poles");
  for (int i = 0; i < degree; ++i) out.z.emplace_back(0.0, 0.0);
  out.k = lp.k * std::pow(bw, degree);
  return out;
}

inline Zpk lp2bs(const Zpk& lp, double wo, double bw) {
  Zpk out;
  auto invert = [&](const std::vector<cd>& roots, std::vector<cd>& dst) {
    for (cd r : roots) {
      cd s = (bw / 2.0) / r;
      cd d = std::sqrt(s * s - wo * wo);
      dst.push_back(s + d);
      dst.push_back(s - d);
    }
  };
  invert(lp.z, out.z);
  invert(lp.p, out.p);
  int degree = int(lp.p.size()) - int(lp.z.size());
  require(degree >= 0, Err::invalid_argument, "lp2bs: more zeros than poles");
  for (int i = 0; i < degree; ++i) out.z.emplace_back(0.0, wo);
  for (int i = 0; i < degree; ++i) out.z.emplace_back(0.0, -wo);
  cd num(1.0, 0.0), den(1.0, 0.0);
  for (cd z : lp.z) num *= -z;
  for (cd p : lp.p) den *= -p;
  out.k = lp.k * (num / den).real();
  return out;
}

inline Zpk bilinear(const Zpk& analog, double fs) {
  double fs2 = 2.0 * fs;
  Zpk out;
  cd num(1.0, 0.0), den(1.0, 0.0);
  for (cd z : analog.z) {
    out.z.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (cd p : analog.p) {
    out.p.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  int degree = int(analog.p.size()) - int(analog.z.size());
  for (int i = 0; i < degree; ++i) out.z.emplace_back(-1.0, 0.0);
  out.k = analog.k * (num / den).real();
  return out;
}

// Second-order sections, rows of [b0 b1 b2 1 a1 a2].
struct Sos {
  std::vector<std::array<double, 6>> sections;
};

namespace detail {

// Deterministic pairing of roots into real-coefficient quadratics: conjugate
// pairs stay together, leftover real roots are paired in sorted order.
inline std::vector<std::array<cd, 2>> pair_roots(std::vector<cd> roots) {
  const double tol = 1e-9;
  std::vector<cd> complex_half, reals;
  for (cd r : roots) {
    if (r.imag() > tol)
      complex_half.push_back(r);
    else if (std::abs(r.imag()) <= tol)
      reals.push_back(r);
  }
  auto by_mag = [](cd a, cd b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  };
  std::sort(complex_half.begin(), complex_half.end(), by_mag);
  std::sort(reals.begin(), reals.end(), by_mag);
  std::vector<std::array<cd, 2>> pairs;
  for (cd r : complex_half) pairs.push_back({r, std::conj(r)});
  for (size_t i = 0; i + 1 < reals.size(); i += 2) pairs.push_back({reals[i], reals[i + 1]});
  if (reals.size() % 2 == 1) pairs.push_back({reals.back(), cd(0.0, 0.0)});
  return pairs;
}

}  // namespace detail

inline Sos zpk2sos(const Zpk& zpk) {
  require(zpk.z.size() <= zpk.p.size(), Err::invalid_argument, "zpk2sos: more zeros than poles");
  auto zp = detail::pair_roots(zpk.z);
  auto pp = detail::pair_roots(zpk.p);
  Sos out;
  size_t nsec = std::max(zp.size(), pp.size());
  for (size_t i = 0; i < nsec; ++i) {
    std::array<double, 6> sec{1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
    if (i < zp.size()) {
      cd a = zp[i][0], b = zp[i][1];
      sec[1] = -(a + b).real();
      sec[2] = (a * b).real();
    }
    if (i < pp.size()) {
      cd a = pp[i][0], b = pp[i][1];
      sec[4] = -(a + b).real();
      sec[5] = (a * b).real();
    }
    out.sections.push_back(sec);
  }
  // Put the whole gain on the first section.
  for (int j = 0; j < 3; ++j) out.sections[0][size_t(j)] *= zpk.k;
  return out;
}

inline double warp(double f_hz, double fs_hz) { return 2.0 * fs_hz * std::tan(M_PI * f_hz / fs_hz); }

inline Sos butter_bandpass(int order, double fs, double lo, double hi) {
  require(fs > 0.0, Err::invalid_argument, "butter_bandpass: fs must be positive");
  require(0.0 < lo && lo < hi && hi < fs / 2.0, Err::invalid_argument,
          "butter_bandpass: need 0 < lo < hi < Nyquist");
  double w1 = warp(lo, fs), w2 = warp(hi, fs);
  Zpk d = bilinear(lp2bp(butter_prototype(order), std::sqrt(w1 * w2), w2 - w1), fs);
  return zpk2sos(d);
}

// Stop band centered so the transmission zero lands exactly on f0.
inline Sos butter_notch(int order, double fs, double f0, double width) {
  require(fs > 0.0, Err::invalid_argument, "butter_notch: fs must be positive");
  require(width > 0.0, Err::invalid_argument, "butter_notch: width must be positive");
  require(0.0 < f0 - width / 2.0 && f0 + width / 2.0 < fs / 2.0, Err::invalid_argument,
          "butter_notch: stop band must sit strictly inside (0, Nyquist)");
  double wz = warp(f0, fs);
  double w1 = warp(f0 - width / 2.0, fs);
  double w2 = wz * wz / w1;
  Zpk d = bilinear(lp2bs(butter_prototype(order), wz, w2 - w1), fs);
  return zpk2sos(d);
}

namespace detail {

// State for a step of height 1 held forever, so initializing with
// state * x[0] removes the startup transient for signals near x[0].
inline std::array<double, 2> unit_step_state(const std::array<double, 6>& s) {
  double h1 = (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]);
  return {h1 - s[0], s[2] - s[5] * h1};
}

inline void sosfilt_inplace(const Sos& sos, Vecd& x) {
  for (const auto& sec : sos.sections) {
    auto zi = unit_step_state(sec);
    double s1 = zi[0] * x[0];
    double s2 = zi[1] * x[0];
    for (Index i = 0; i < x.size(); ++i) {
      double v = x[i];
      double y = sec[0] * v + s1;
      s1 = sec[1] * v - sec[4] * y + s2;
      s2 = sec[2] * v - sec[5] * y;
      x[i] = y;
    }
  }
}

}  // namespace detail

// Forward-backward filtering with odd-symmetric edge extension.
inline Vecd sosfiltfilt(const Sos& sos, const Vecd& x) {
  Index n = x.size();
  require(n >= 2, Err::invalid_argument, "sosfiltfilt: need at least 2 samples");
  Index pad = std::min<Index>(n - 1, std::max<Index>(Index(6 * sos.sections.size() + 3), 240));
  Vecd ext(n + 2 * pad);
  for (Index i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  ext.segment(pad, n) = x;
  for (Index i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  detail::sosfilt_inplace(sos, ext);
  ext.reverseInPlace();
  detail::sosfilt_inplace(sos, ext);
  ext.reverseInPlace();
  return ext.segment(pad, n);
}

template <class S>
Mat<S> apply_zero_phase(const Sos& sos, const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  for (Index c = 0; c < x.rows(); ++c) {
    Vecd row = x.row(c).template cast<double>();
    out.row(c) = sosfiltfilt(sos, row).template cast<S>();
  }
  return out;
}

template <class S>
Mat<S> notch_filter(const Mat<S>& x, double fs_hz, double f0_hz, double width_hz = 4.0) {
  return apply_zero_phase(butter_notch(4, fs_hz, f0_hz, width_hz), x);
}

template <class S>
Mat<S> bandpass_filter(const Mat<S>& x, double fs_hz, double lo_hz, double hi_hz) {
  return apply_zero_phase(butter_bandpass(4, fs_hz, lo_hz, hi_hz), x);
}

}  // namespace cast::dsp
