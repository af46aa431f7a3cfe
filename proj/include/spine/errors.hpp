#pragma once

#include <stdexcept>
#include <string>

namespace spine {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File and format problems for volume/checkpoint/config I/O.
struct IoError : Error {
  enum class Kind { missing_file, bad_header, payload_mismatch, write_failure };
  Kind kind;
  IoError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

// Tensor/volume shape disagreement.
struct ShapeError : Error {
  using Error::Error;
};

// Semantically invalid values (labels out of range, non-finite data, infeasible specs).
struct DataError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Stage-1 produced no foreground at all.
struct NoSpineFound : Error {
  using Error::Error;
};

}  // namespace spine
