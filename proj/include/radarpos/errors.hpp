// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace radarpos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or layout mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an op (log of non-positive, zero-norm cosine).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an API precondition (backward on a non-scalar, loss with no masked rows).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or simulator specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or mismatching on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Sequence too short to be turned into a sample.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (NaN/Inf loss or gradient).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Process exit codes shared by the CLI.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int format = 3;
inline constexpr int numeric = 4;
inline constexpr int gradcheck = 5;
}  // namespace exit_code

}  // namespace radarpos
