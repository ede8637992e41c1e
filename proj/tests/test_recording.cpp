#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cast/recording.hpp"
#include "cast/rng.hpp"
#include "cast/windows.hpp"

#include <set>

using namespace cast;

namespace {

ChannelMeta scalp(const std::string& name) {
  ChannelMeta c;
  c.name = name;
  c.role = ChannelRole::scalp_eeg;
  c.montage_slot = *canonical_slot(name);
  return c;
}

ChannelMeta depth_ch(const std::string& name, Depth d = Depth::mid) {
  ChannelMeta c;
  c.name = name;
  c.role = ChannelRole::ieeg;
  c.depth = d;
  c.region = "mesial";
  return c;
}

Recording noise_recording(Index n_samples, uint64_t seed, double fs = 200.0) {
  Recording rec;
  rec.subject_id = "s01";
  rec.sample_rate_hz = fs;
  rec.channels = {scalp("Fp1"), scalp("Fz"), scalp("T7"), depth_ch("D1"), depth_ch("D2", Depth::deep)};
  rec.data.resize(5, n_samples);
  Rng rng(seed);
  for (Index i = 0; i < rec.data.size(); ++i) rec.data.data()[i] = rng.normal();
  return rec;
}

}  // namespace

TEST_CASE("canonical montage is 21 unique labeled slots") {
  const auto& m = canonical_montage();
  std::set<std::string> names(m.begin(), m.end());
  CHECK(names.size() == 21);
  CHECK(*canonical_slot("Fp1") == 0);
  CHECK(*canonical_slot("A2") == 20);
  CHECK(*canonical_slot("Cz") == 9);
  CHECK(!canonical_slot("Fpz").has_value());
}

TEST_CASE("validate accepts a well-formed recording") {
  Recording rec = noise_recording(500, 1);
  rec.segment_boundaries = {100, 300};
  CHECK_NOTHROW(rec.validate());
}

TEST_CASE("validate rejects malformed recordings") {
  Recording rec = noise_recording(500, 1);

  SUBCASE("duplicate channel name") {
    rec.channels[3].name = "Fp1";
    CHECK_THROWS_WITH_AS(rec.validate(), doctest::Contains("duplicate"), Error);
  }
  SUBCASE("scalp channel without slot") {
    rec.channels[0].montage_slot.reset();
    CHECK_THROWS_AS(rec.validate(), Error);
  }
  SUBCASE("slot out of range") {
    rec.channels[0].montage_slot = 21;
    CHECK_THROWS_AS(rec.validate(), Error);
  }
  SUBCASE("slot reused") {
    rec.channels[1].montage_slot = 0;
    CHECK_THROWS_AS(rec.validate(), Error);
  }
  SUBCASE("depth channel with slot") {
    rec.channels[3].montage_slot = 5;
    CHECK_THROWS_AS(rec.validate(), Error);
  }
  SUBCASE("non-ascending boundaries") {
    rec.segment_boundaries = {300, 300};
    CHECK_THROWS_AS(rec.validate(), Error);
  }
  SUBCASE("boundary at the end") {
    rec.segment_boundaries = {500};
    CHECK_THROWS_AS(rec.validate(), Error);
  }
  SUBCASE("channel count mismatch") {
    rec.channels.pop_back();
    CHECK_THROWS_AS(rec.validate(), Error);
  }
}

TEST_CASE("merge stacks channels of simultaneous recordings") {
  Recording a = noise_recording(400, 1);
  a.channels = {scalp("Fp1"), scalp("Fz"), scalp("T7"), scalp("O1"), scalp("O2")};
  Recording b = noise_recording(400, 2);
  b.channels = {depth_ch("D1"), depth_ch("D2"), depth_ch("D3"), depth_ch("D4"), depth_ch("D5")};

  Recording m = merge_recordings(a, b);
  CHECK(m.n_channels() == 10);
  CHECK(m.data.row(0) == a.data.row(0));
  CHECK(m.data.row(5) == b.data.row(0));

  SUBCASE("subject mismatch") {
    b.subject_id = "s02";
    CHECK_THROWS_AS(merge_recordings(a, b), Error);
  }
  SUBCASE("rate mismatch") {
    b.sample_rate_hz = 512.0;
    CHECK_THROWS_AS(merge_recordings(a, b), Error);
  }
  SUBCASE("length mismatch") {
    b.data.conservativeResize(5, 300);
    CHECK_THROWS_AS(merge_recordings(a, b), Error);
  }
  SUBCASE("name collision") {
    b.channels[0] = scalp("Fp1");
    b.channels[0].role = ChannelRole::ieeg;
    b.channels[0].montage_slot.reset();
    CHECK_THROWS_WITH_AS(merge_recordings(a, b), doctest::Contains("duplicate"), Error);
  }
}

TEST_CASE("zscore_rows standardizes each row") {
  Matd x(2, 4);
  x << 1, 2, 3, 4, 7, 7, 7, 7;
  Matd z = zscore_rows(x);
  CHECK(z(0, 0) == doctest::Approx(-1.3416407865).epsilon(1e-9));
  CHECK(z(0, 1) == doctest::Approx(-0.4472135955).epsilon(1e-9));
  CHECK(z(0, 3) == doctest::Approx(1.3416407865).epsilon(1e-9));
  CHECK(z.row(0).mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(z.row(0).array().square().mean() == doctest::Approx(1.0).epsilon(1e-12));

  // Constant row collapses to zeros, never NaN.
  CHECK(z.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.allFinite());
}

TEST_CASE("make_windows slices with 50% overlap") {
  Recording rec = noise_recording(1200, 7);
  WindowSet ws = make_windows(rec);
  CHECK(ws.n_candidates == 5);
  CHECK(ws.window_start_samples.front() == 0);
  for (size_t i = 1; i < ws.window_start_samples.size(); ++i)
    CHECK(ws.window_start_samples[i] % kWindowStride == 0);
  CHECK(ws.windows[0].eeg.rows() == kMontageSize);
  CHECK(ws.windows[0].eeg.cols() == kWindowLen);
  CHECK(ws.windows[0].ieeg.rows() == 2);
  CHECK(ws.source_subject == "s01");
}

TEST_CASE("windows never straddle a segment boundary") {
  Recording rec = noise_recording(1200, 8);
  rec.segment_boundaries = {500};
  WindowSet ws = make_windows(rec);
  for (Index t : ws.window_start_samples) {
    bool in_first = t + kWindowLen <= 500;
    bool in_second = t >= 500;
    CHECK((in_first || in_second));
  }
  CHECK(ws.n_candidates == 3);
}

TEST_CASE("window rows are standardized and absent slots stay zero") {
  Recording rec = noise_recording(800, 9);
  WindowSet ws = make_windows(rec);
  std::set<int> present{0, *canonical_slot("Fz"), *canonical_slot("T7")};
  for (const auto& w : ws.windows) {
    for (int r = 0; r < kMontageSize; ++r) {
      Vecd row = w.eeg.row(r).cast<double>();
      if (present.count(r)) {
        CHECK(row.mean() == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(row.array().square().mean() == doctest::Approx(1.0).epsilon(1e-4));
      } else {
        CHECK(row.cwiseAbs().maxCoeff() == 0.0);
      }
    }
    for (Index r = 0; r < w.ieeg.rows(); ++r)
      CHECK(double(w.ieeg.row(r).mean()) == doctest::Approx(0.0).epsilon(1e-5));
  }
  CHECK(ws.canonical_mask[0]);
  CHECK(ws.canonical_mask[size_t(*canonical_slot("T7"))]);
  CHECK(!ws.canonical_mask[1]);
}

TEST_CASE("windows containing an amplitude excursion are dropped") {
  Recording rec = noise_recording(1200, 10);
  rec.data(0, 450) = 100.0;
  WindowSet ws = make_windows(rec);
  CHECK(ws.n_candidates == 5);
  CHECK(ws.n_rejected == 2);
  for (Index t : ws.window_start_samples) CHECK(!(t <= 450 && 450 < t + kWindowLen));
}

TEST_CASE("all windows rejected raises empty_result") {
  Recording rec = noise_recording(400, 11);
  rec.data(0, 50) = 1000.0;
  try {
    make_windows(rec);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Err::empty_result);
  }
}

TEST_CASE("make_windows input validation") {
  Recording rec = noise_recording(800, 12);

  SUBCASE("wrong rate") {
    rec.sample_rate_hz = 512.0;
    CHECK_THROWS_AS(make_windows(rec), Error);
  }
  SUBCASE("no scalp channels") {
    for (auto& c : rec.channels) {
      c.role = ChannelRole::ieeg;
      c.montage_slot.reset();
    }
    CHECK_THROWS_AS(make_windows(rec), Error);
  }
  SUBCASE("no depth channels") {
    rec.channels[3] = scalp("O1");
    rec.channels[4] = scalp("O2");
    CHECK_THROWS_AS(make_windows(rec), Error);
  }
}

TEST_CASE("canonical layout does not depend on channel order") {
  Recording rec = noise_recording(800, 13);
  Recording shuffled = rec;
  std::vector<size_t> perm{4, 2, 0, 3, 1};
  for (size_t i = 0; i < perm.size(); ++i) {
    shuffled.channels[i] = rec.channels[perm[i]];
    shuffled.data.row(Index(i)) = rec.data.row(Index(perm[i]));
  }
  WindowSet a = make_windows(rec);
  WindowSet b = make_windows(shuffled);
  REQUIRE(a.n_windows() == b.n_windows());
  for (Index w = 0; w < a.n_windows(); ++w) CHECK(a.windows[size_t(w)].eeg == b.windows[size_t(w)].eeg);
  CHECK(a.canonical_mask == b.canonical_mask);
}

TEST_CASE("preprocess resamples and rescales boundaries") {
  Recording rec = noise_recording(2048, 14, 512.0);
  rec.segment_boundaries = {1024};
  PreprocessConfig cfg;
  Recording out = preprocess(rec, cfg);
  CHECK(out.sample_rate_hz == 200.0);
  CHECK(out.n_samples() == 800);
  REQUIRE(out.segment_boundaries.size() == 1);
  CHECK(out.segment_boundaries[0] == 400);

  cfg.notch = true;
  cfg.bandpass = true;
  Recording filtered = preprocess(rec, cfg);
  CHECK(filtered.n_samples() == 800);
  CHECK(filtered.data.allFinite());
}

TEST_CASE("preprocess at the target rate only filters") {
  Recording rec = noise_recording(1000, 15);
  PreprocessConfig cfg;
  cfg.notch = true;
  Recording out = preprocess(rec, cfg);
  CHECK(out.n_samples() == 1000);
  CHECK(out.sample_rate_hz == 200.0);
  CHECK(out.data != rec.data);
}
