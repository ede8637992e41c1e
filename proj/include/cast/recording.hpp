#pragma once

// In-memory model of a multichannel recording: samples plus channel
// metadata. Scalp channels are tied to a fixed 21-slot montage so that
// windows from different subjects line up channel-for-channel; depth
// channels carry free-form names, a depth bucket and a region label.

#include "cast/common.hpp"

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cast {

inline constexpr int kMontageSize = 21;

inline const std::array<const char*, kMontageSize>& canonical_montage() {
  static const std::array<const char*, kMontageSize> names = {
      "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz", "C4",
      "T8",  "P7",  "P3", "Pz", "P4", "P8", "O1", "O2", "A1", "A2"};
  return names;
}

inline std::optional<int> canonical_slot(const std::string& name) {
  const auto& m = canonical_montage();
  for (int i = 0; i < kMontageSize; ++i)
    if (name == m[size_t(i)]) return i;
  return std::nullopt;
}

enum class ChannelRole { scalp_eeg, ieeg, excluded };
enum class Depth { cortical, mid, deep, unknown };

inline const char* to_string(ChannelRole r) {
  switch (r) {
    case ChannelRole::scalp_eeg: return "scalp_eeg";
    case ChannelRole::ieeg: return "ieeg";
    case ChannelRole::excluded: return "excluded";
  }
  return "?";
}

inline const char* to_string(Depth d) {
  switch (d) {
    case Depth::cortical: return "cortical";
    case Depth::mid: return "mid";
    case Depth::deep: return "deep";
    case Depth::unknown: return "unknown";
  }
  return "?";
}

inline ChannelRole role_from_string(const std::string& s) {
  if (s == "scalp_eeg") return ChannelRole::scalp_eeg;
  if (s == "ieeg") return ChannelRole::ieeg;
  if (s == "excluded") return ChannelRole::excluded;
  fail(Err::parse, "unknown channel role '" + s + "'");
}

inline Depth depth_from_string(const std::string& s) {
  if (s == "cortical") return Depth::cortical;
  if (s == "mid") return Depth::mid;
  if (s == "deep") return Depth::deep;
  if (s == "unknown") return Depth::unknown;
  fail(Err::parse, "unknown depth bucket '" + s + "'");
}

struct ChannelMeta {
  std::string name;
  ChannelRole role = ChannelRole::excluded;
  Depth depth = Depth::unknown;
  std::string region;
  std::optional<int> montage_slot;
};

struct Recording {
  std::string subject_id;
  double sample_rate_hz = 0.0;
  std::vector<ChannelMeta> channels;
  // Start index of every segment after the first; the signal is contiguous
  // only within [0, b0), [b0, b1), ..., [bk, n). Windows never straddle one.
  std::vector<Index> segment_boundaries;
  Matd data;  // channels x samples

  Index n_channels() const { return Index(channels.size()); }
  Index n_samples() const { return data.cols(); }

  void validate() const {
    require(sample_rate_hz > 0.0, Err::config, "recording: sample rate must be positive");
    require(data.rows() == n_channels(), Err::dimension_mismatch,
            "recording: data rows do not match channel count");
    require(n_channels() > 0, Err::config, "recording: no channels");
    require(n_samples() > 0, Err::config, "recording: no samples");

    std::set<std::string> names;
    std::set<int> slots;
    for (const auto& c : channels) {
      require(!c.name.empty(), Err::config, "recording: empty channel name");
      require(names.insert(c.name).second, Err::duplicate_channel,
              "recording: duplicate channel '" + c.name + "'");
      if (c.role == ChannelRole::scalp_eeg) {
        require(c.montage_slot.has_value(), Err::config,
                "recording: scalp channel '" + c.name + "' has no montage slot");
        int s = *c.montage_slot;
        require(s >= 0 && s < kMontageSize, Err::config,
                "recording: montage slot out of range for '" + c.name + "'");
        require(slots.insert(s).second, Err::config,
                "recording: montage slot reused by '" + c.name + "'");
      } else {
        require(!c.montage_slot.has_value(), Err::config,
                "recording: non-scalp channel '" + c.name + "' carries a montage slot");
      }
    }

    Index prev = 0;
    for (Index b : segment_boundaries) {
      require(b > prev && b < n_samples(), Err::config,
              "recording: segment boundaries must be ascending and interior");
      prev = b;
    }
  }
};

// Combine two simultaneously recorded channel sets (e.g. scalp and depth
// arrays saved as separate bundles) into one recording.
inline Recording merge_recordings(const Recording& a, const Recording& b) {
  require(a.subject_id == b.subject_id, Err::invalid_argument,
          "merge: subject ids differ (" + a.subject_id + " vs " + b.subject_id + ")");
  require(a.sample_rate_hz == b.sample_rate_hz, Err::invalid_argument, "merge: sample rates differ");
  require(a.n_samples() == b.n_samples(), Err::dimension_mismatch, "merge: sample counts differ");
  require(a.segment_boundaries == b.segment_boundaries, Err::invalid_argument,
          "merge: segment boundaries differ");
  Recording out;
  out.subject_id = a.subject_id;
  out.sample_rate_hz = a.sample_rate_hz;
  out.segment_boundaries = a.segment_boundaries;
  out.channels = a.channels;
  out.channels.insert(out.channels.end(), b.channels.begin(), b.channels.end());
  out.data.resize(a.n_channels() + b.n_channels(), a.n_samples());
  out.data.topRows(a.n_channels()) = a.data;
  out.data.bottomRows(b.n_channels()) = b.data;
  out.validate();
  return out;
}

}  // namespace cast
