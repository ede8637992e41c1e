#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cast/recording_io.hpp"
#include "cast/rng.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace cast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cast_io_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string base(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

Recording sample_recording(uint64_t seed) {
  Recording rec;
  rec.subject_id = "sub-07";
  rec.sample_rate_hz = 200.0;
  ChannelMeta fp1{"Fp1", ChannelRole::scalp_eeg, Depth::unknown, "", 0};
  ChannelMeta cz{"Cz", ChannelRole::scalp_eeg, Depth::unknown, "", 9};
  ChannelMeta d1{"LA1", ChannelRole::ieeg, Depth::deep, "mesial", std::nullopt};
  ChannelMeta bad{"trigger", ChannelRole::excluded, Depth::unknown, "", std::nullopt};
  rec.channels = {fp1, cz, d1, bad};
  rec.segment_boundaries = {300};
  rec.data.resize(4, 900);
  Rng rng(seed);
  // Store float-representable values so a round trip is lossless.
  for (Index i = 0; i < rec.data.size(); ++i) rec.data.data()[i] = double(float(rng.normal()));
  return rec;
}

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("recording round trip is lossless") {
  TempDir tmp;
  Recording rec = sample_recording(1);
  save_recording(rec, tmp.base("rec"));
  Recording back = load_recording(tmp.base("rec"));

  CHECK(back.subject_id == rec.subject_id);
  CHECK(back.sample_rate_hz == rec.sample_rate_hz);
  CHECK(back.segment_boundaries == rec.segment_boundaries);
  REQUIRE(back.n_channels() == rec.n_channels());
  for (Index c = 0; c < rec.n_channels(); ++c) {
    CHECK(back.channels[size_t(c)].name == rec.channels[size_t(c)].name);
    CHECK(back.channels[size_t(c)].role == rec.channels[size_t(c)].role);
    CHECK(back.channels[size_t(c)].depth == rec.channels[size_t(c)].depth);
    CHECK(back.channels[size_t(c)].region == rec.channels[size_t(c)].region);
    CHECK(back.channels[size_t(c)].montage_slot == rec.channels[size_t(c)].montage_slot);
  }
  CHECK(back.data == rec.data);
}

TEST_CASE("re-saving a loaded recording is byte-identical") {
  TempDir tmp;
  save_recording(sample_recording(2), tmp.base("a"));
  Recording r = load_recording(tmp.base("a"));
  save_recording(r, tmp.base("b"));
  CHECK(slurp(tmp.base("a") + ".manifest.json") == slurp(tmp.base("b") + ".manifest.json"));
  CHECK(slurp(tmp.base("a") + ".f32") == slurp(tmp.base("b") + ".f32"));
}

TEST_CASE("missing files raise io errors") {
  TempDir tmp;
  try {
    load_recording(tmp.base("absent"));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Err::io);
  }
}

TEST_CASE("payload size must match the manifest") {
  TempDir tmp;
  save_recording(sample_recording(3), tmp.base("rec"));
  fs::resize_file(tmp.base("rec") + ".f32", 100);
  try {
    load_recording(tmp.base("rec"));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Err::dimension_mismatch);
  }
}

TEST_CASE("malformed manifests raise parse errors") {
  TempDir tmp;
  save_recording(sample_recording(4), tmp.base("rec"));

  SUBCASE("broken json") {
    std::ofstream f(tmp.base("rec") + ".manifest.json");
    f << "{ not json";
    f.close();
    try {
      load_recording(tmp.base("rec"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Err::parse);
    }
  }
  SUBCASE("unknown role string") {
    auto j = ioutil::load_json(tmp.base("rec") + ".manifest.json");
    j["channels"][0]["role"] = "magnetometer";
    ioutil::save_json(tmp.base("rec") + ".manifest.json", j);
    try {
      load_recording(tmp.base("rec"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Err::parse);
    }
  }
  SUBCASE("duplicate channel name") {
    auto j = ioutil::load_json(tmp.base("rec") + ".manifest.json");
    j["channels"][2]["name"] = "Fp1";
    ioutil::save_json(tmp.base("rec") + ".manifest.json", j);
    try {
      load_recording(tmp.base("rec"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Err::duplicate_channel);
    }
  }
  SUBCASE("missing required field") {
    auto j = ioutil::load_json(tmp.base("rec") + ".manifest.json");
    j.erase("sample_rate_hz");
    ioutil::save_json(tmp.base("rec") + ".manifest.json", j);
    try {
      load_recording(tmp.base("rec"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Err::parse);
    }
  }
}

TEST_CASE("window set cache round trip") {
  TempDir tmp;
  Recording rec = sample_recording(5);
  rec.channels[3] = ChannelMeta{"LA2", ChannelRole::ieeg, Depth::mid, "mesial", std::nullopt};
  WindowSet ws = make_windows(rec);
  REQUIRE(ws.n_windows() >= 2);

  save_windows(ws, tmp.base("w"));
  WindowSet back = load_windows(tmp.base("w"));

  CHECK(back.source_subject == ws.source_subject);
  CHECK(back.canonical_mask == ws.canonical_mask);
  CHECK(back.window_start_samples == ws.window_start_samples);
  CHECK(back.n_candidates == ws.n_candidates);
  CHECK(back.n_rejected == ws.n_rejected);
  REQUIRE(back.n_ieeg() == ws.n_ieeg());
  CHECK(back.ieeg_channels[0].depth == ws.ieeg_channels[0].depth);
  REQUIRE(back.n_windows() == ws.n_windows());
  for (Index w = 0; w < ws.n_windows(); ++w) {
    CHECK(back.windows[size_t(w)].eeg == ws.windows[size_t(w)].eeg);
    CHECK(back.windows[size_t(w)].ieeg == ws.windows[size_t(w)].ieeg);
  }
}

TEST_CASE("window cache validates payload length") {
  TempDir tmp;
  Recording rec = sample_recording(6);
  rec.channels[3] = ChannelMeta{"LA2", ChannelRole::ieeg, Depth::mid, "mesial", std::nullopt};
  save_windows(make_windows(rec), tmp.base("w"));
  fs::resize_file(tmp.base("w") + ".wf32", 64);
  try {
    load_windows(tmp.base("w"));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Err::dimension_mismatch);
  }
}
