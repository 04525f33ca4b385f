#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace pbr {

/// Invalid argument values or inconsistent shapes.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated artifact files, and I/O failures.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or inference.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing artifacts, unknown config keys, scheme/model mismatches.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using FloatSpan = std::span<const float>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

inline void require_same_dim(std::size_t a, std::size_t b, const char* where) {
  if (a != b) {
    throw ParameterError(std::string(where) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace pbr
