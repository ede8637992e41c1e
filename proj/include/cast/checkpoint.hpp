#pragma once

// Checkpoint container: a small JSON header followed by length-prefixed
// parameter records (name, shape, float32 row-major payload). Loading into
// a float store is bit-exact with respect to saving.
//
//   bytes 0..7    magic "CASTCKPT"
//   u32           header length
//   header bytes  json: format_version, rng_seed, step, n_params, extra
//   per record    u32 name_len, name, u32 rows, u32 cols, rows*cols f32

#include "cast/common.hpp"
#include "cast/nn.hpp"
#include "cast/recording_io.hpp"

#include <cstring>
#include <fstream>
#include <string>

namespace cast {

struct CheckpointHeader {
  int format_version = 1;
  uint64_t rng_seed = 0;
  int64_t step = 0;
  json extra = json::object();
};

namespace detail {

inline void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  require(f.good(), Err::parse, "checkpoint: truncated");
  return v;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, const nn::ParamStore<S>& ps,
                     const CheckpointHeader& hdr) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Err::io, "cannot write '" + path + "'");
  f.write("CASTCKPT", 8);
  json j;
  j["format_version"] = hdr.format_version;
  j["rng_seed"] = hdr.rng_seed;
  j["step"] = hdr.step;
  j["n_params"] = ps.count();
  j["extra"] = hdr.extra;
  std::string hs = j.dump();
  detail::write_u32(f, uint32_t(hs.size()));
  f.write(hs.data(), std::streamsize(hs.size()));
  ps.for_each([&](const std::string& name, const nn::Tensor<S>& t) {
    detail::write_u32(f, uint32_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    detail::write_u32(f, uint32_t(t.rows()));
    detail::write_u32(f, uint32_t(t.cols()));
    Matf v = t.value.template cast<float>();
    f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(size_t(v.size()) * 4));
  });
  require(f.good(), Err::io, "write failed on '" + path + "'");
}

// Fills an empty store (or overwrites same-shaped tensors of a built model).
template <class S>
CheckpointHeader load_checkpoint(const std::string& path, nn::ParamStore<S>& ps) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::io, "cannot open '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, "CASTCKPT", 8) == 0, Err::parse,
          "'" + path + "' is not a checkpoint");
  uint32_t hlen = detail::read_u32(f);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  require(f.good(), Err::parse, "checkpoint: truncated header");
  CheckpointHeader hdr;
  size_t n_params = 0;
  try {
    json j = json::parse(hs);
    hdr.format_version = j.at("format_version").get<int>();
    require(hdr.format_version == 1, Err::parse,
            "unsupported checkpoint version " + std::to_string(hdr.format_version));
    hdr.rng_seed = j.at("rng_seed").get<uint64_t>();
    hdr.step = j.at("step").get<int64_t>();
    hdr.extra = j.value("extra", json::object());
    n_params = j.at("n_params").get<size_t>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Err::parse, std::string("checkpoint: bad header: ") + e.what());
  }

  for (size_t i = 0; i < n_params; ++i) {
    uint32_t nlen = detail::read_u32(f);
    require(nlen < 4096, Err::parse, "checkpoint: implausible name length");
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    Index rows = Index(detail::read_u32(f));
    Index cols = Index(detail::read_u32(f));
    Matf v(rows, cols);
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(size_t(v.size()) * 4));
    require(f.good(), Err::parse, "checkpoint: truncated record for '" + name + "'");
    if (ps.contains(name)) {
      nn::Tensor<S>& t = ps.at(name);
      require(t.rows() == rows && t.cols() == cols, Err::dimension_mismatch,
              "checkpoint: shape mismatch for '" + name + "'");
      t.value = v.template cast<S>();
    } else {
      nn::Tensor<S>& t = ps.add(name, rows, cols);
      t.value = v.template cast<S>();
    }
  }
  return hdr;
}

}  // namespace cast
