#pragma once

// On-disk formats. A recording is a pair of files sharing a base path:
//   <base>.manifest.json   metadata (rates, channels, segmentation)
//   <base>.f32             raw samples, float32 little-endian, channel-major
// A window set cache uses <base>.windows.json plus <base>.wf32 with each
// window stored as its canonical EEG block followed by its depth block.

#include "cast/common.hpp"
#include "cast/recording.hpp"
#include "cast/windows.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "sample payloads are written little-endian without swapping");

namespace cast {

using json = nlohmann::ordered_json;

namespace ioutil {

inline void write_f32(std::ofstream& f, const float* p, size_t n) {
  f.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(float)));
}

inline std::vector<float> read_f32_file(const std::string& path, size_t expected) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::io, "cannot open '" + path + "'");
  f.seekg(0, std::ios::end);
  auto bytes = size_t(f.tellg());
  require(bytes == expected * sizeof(float), Err::dimension_mismatch,
          "payload '" + path + "' holds " + std::to_string(bytes / sizeof(float)) +
              " samples, manifest declares " + std::to_string(expected));
  f.seekg(0);
  std::vector<float> out(expected);
  f.read(reinterpret_cast<char*>(out.data()), std::streamsize(bytes));
  require(f.good(), Err::io, "short read on '" + path + "'");
  return out;
}

inline json load_json(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::io, "cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const std::exception& e) {
    fail(Err::parse, "malformed json in '" + path + "': " + e.what());
  }
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  require(f.good(), Err::io, "cannot write '" + path + "'");
  f << j.dump(2) << "\n";
  require(f.good(), Err::io, "write failed on '" + path + "'");
}

}  // namespace ioutil

inline json channel_to_json(const ChannelMeta& c) {
  json j;
  j["name"] = c.name;
  j["role"] = to_string(c.role);
  j["depth"] = to_string(c.depth);
  j["region"] = c.region;
  if (c.montage_slot)
    j["montage_slot"] = *c.montage_slot;
  else
    j["montage_slot"] = nullptr;
  return j;
}

inline ChannelMeta channel_from_json(const json& j) {
  try {
    ChannelMeta c;
    c.name = j.at("name").get<std::string>();
    c.role = role_from_string(j.at("role").get<std::string>());
    c.depth = depth_from_string(j.at("depth").get<std::string>());
    c.region = j.value("region", std::string());
    if (j.contains("montage_slot") && !j.at("montage_slot").is_null())
      c.montage_slot = j.at("montage_slot").get<int>();
    return c;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Err::parse, std::string("bad channel entry: ") + e.what());
  }
}

inline void save_recording(const Recording& rec, const std::string& base) {
  rec.validate();
  json j;
  j["format_version"] = 1;
  j["subject_id"] = rec.subject_id;
  j["sample_rate_hz"] = rec.sample_rate_hz;
  j["n_samples"] = rec.n_samples();
  j["segment_boundaries"] = rec.segment_boundaries;
  j["channels"] = json::array();
  for (const auto& c : rec.channels) j["channels"].push_back(channel_to_json(c));
  ioutil::save_json(base + ".manifest.json", j);

  Matf asf = rec.data.cast<float>();
  std::ofstream f(base + ".f32", std::ios::binary);
  require(f.good(), Err::io, "cannot write '" + base + ".f32'");
  ioutil::write_f32(f, asf.data(), size_t(asf.size()));
  require(f.good(), Err::io, "write failed on '" + base + ".f32'");
}

inline Recording load_recording(const std::string& base) {
  json j = ioutil::load_json(base + ".manifest.json");
  Recording rec;
  try {
    int ver = j.at("format_version").get<int>();
    require(ver == 1, Err::parse, "unsupported recording format version " + std::to_string(ver));
    rec.subject_id = j.at("subject_id").get<std::string>();
    rec.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    for (const auto& cj : j.at("channels")) rec.channels.push_back(channel_from_json(cj));
    for (const auto& b : j.at("segment_boundaries")) rec.segment_boundaries.push_back(b.get<Index>());
    Index n = j.at("n_samples").get<Index>();
    require(n >= 0, Err::parse, "negative n_samples");
    auto flat = ioutil::read_f32_file(base + ".f32", size_t(rec.channels.size()) * size_t(n));
    rec.data.resize(Index(rec.channels.size()), n);
    for (Index i = 0; i < rec.data.size(); ++i) rec.data.data()[i] = double(flat[size_t(i)]);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Err::parse, "bad manifest '" + base + ".manifest.json': " + e.what());
  }
  rec.validate();
  return rec;
}

inline void save_windows(const WindowSet& ws, const std::string& base) {
  json j;
  j["format_version"] = 1;
  j["source_subject"] = ws.source_subject;
  j["window_len"] = kWindowLen;
  j["stride"] = kWindowStride;
  j["eeg_rows"] = kMontageSize;
  j["n_windows"] = ws.n_windows();
  j["n_candidates"] = ws.n_candidates;
  j["n_rejected"] = ws.n_rejected;
  j["window_start_samples"] = ws.window_start_samples;
  json mask = json::array();
  for (bool b : ws.canonical_mask) mask.push_back(int(b));
  j["canonical_mask"] = mask;
  j["ieeg_channels"] = json::array();
  for (const auto& c : ws.ieeg_channels) j["ieeg_channels"].push_back(channel_to_json(c));
  ioutil::save_json(base + ".windows.json", j);

  std::ofstream f(base + ".wf32", std::ios::binary);
  require(f.good(), Err::io, "cannot write '" + base + ".wf32'");
  for (const auto& w : ws.windows) {
    ioutil::write_f32(f, w.eeg.data(), size_t(w.eeg.size()));
    ioutil::write_f32(f, w.ieeg.data(), size_t(w.ieeg.size()));
  }
  require(f.good(), Err::io, "write failed on '" + base + ".wf32'");
}

inline WindowSet load_windows(const std::string& base) {
  json j = ioutil::load_json(base + ".windows.json");
  WindowSet ws;
  Index n_windows = 0;
  try {
    int ver = j.at("format_version").get<int>();
    require(ver == 1, Err::parse, "unsupported window format version " + std::to_string(ver));
    require(j.at("window_len").get<Index>() == kWindowLen, Err::parse, "unexpected window length");
    require(j.at("eeg_rows").get<Index>() == kMontageSize, Err::parse, "unexpected canonical row count");
    ws.source_subject = j.at("source_subject").get<std::string>();
    ws.n_candidates = j.at("n_candidates").get<Index>();
    ws.n_rejected = j.at("n_rejected").get<Index>();
    n_windows = j.at("n_windows").get<Index>();
    const auto& mask = j.at("canonical_mask");
    require(Index(mask.size()) == kMontageSize, Err::parse, "canonical mask has wrong length");
    for (int i = 0; i < kMontageSize; ++i) ws.canonical_mask[size_t(i)] = mask[size_t(i)].get<int>() != 0;
    for (const auto& cj : j.at("ieeg_channels")) ws.ieeg_channels.push_back(channel_from_json(cj));
    for (const auto& s : j.at("window_start_samples")) ws.window_start_samples.push_back(s.get<Index>());
    require(Index(ws.window_start_samples.size()) == n_windows, Err::dimension_mismatch,
            "window start list does not match n_windows");
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Err::parse, "bad manifest '" + base + ".windows.json': " + e.what());
  }

  size_t per = size_t(kMontageSize + ws.n_ieeg()) * size_t(kWindowLen);
  auto flat = ioutil::read_f32_file(base + ".wf32", per * size_t(n_windows));
  const float* p = flat.data();
  for (Index w = 0; w < n_windows; ++w) {
    WindowPair wp;
    wp.eeg.resize(kMontageSize, kWindowLen);
    std::copy(p, p + wp.eeg.size(), wp.eeg.data());
    p += wp.eeg.size();
    wp.ieeg.resize(ws.n_ieeg(), kWindowLen);
    std::copy(p, p + wp.ieeg.size(), wp.ieeg.data());
    p += wp.ieeg.size();
    ws.windows.push_back(std::move(wp));
  }
  return ws;
}

}  // namespace cast
