#pragma once

// Shared aliases and the error taxonomy used across the library.
// All dense math goes through Eigen; matrices are row-major so that a
// batch folded into rows is contiguous per example.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cast {

using Index = Eigen::Index;

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Matf = Mat<float>;
using Matd = Mat<double>;
using Vecf = Vec<float>;
using Vecd = Vec<double>;

enum class Err {
  invalid_argument,   // bad value passed to a function
  config,             // inconsistent configuration object
  shape,              // matrix dimensions do not line up
  index,              // out-of-range index
  parse,              // malformed file or unknown enum string
  dimension_mismatch, // declared sizes disagree with payload
  duplicate_channel,  // channel name reused within a recording
  insufficient_data,  // too few observations for the requested fit
  empty_result,       // operation produced nothing (e.g. all windows rejected)
  io,                 // missing or unreadable/unwritable file
  numeric,            // non-finite value where a finite one is required
  grouping,           // grouped model called with degenerate grouping
  design_rank,        // rank-deficient design matrix
};

inline const char* to_string(Err e) {
  switch (e) {
    case Err::invalid_argument: return "invalid_argument";
    case Err::config: return "config";
    case Err::shape: return "shape";
    case Err::index: return "index";
    case Err::parse: return "parse";
    case Err::dimension_mismatch: return "dimension_mismatch";
    case Err::duplicate_channel: return "duplicate_channel";
    case Err::insufficient_data: return "insufficient_data";
    case Err::empty_result: return "empty_result";
    case Err::io: return "io";
    case Err::numeric: return "numeric";
    case Err::grouping: return "grouping";
    case Err::design_rank: return "design_rank";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Err code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace cast
