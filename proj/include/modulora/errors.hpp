// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy. The CLI maps these onto its exit-code contract:
//   IoError/FormatError -> 1, ConfigError/DimensionError/RangeError/ContractError -> 2,
//   NumericError -> 3.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace modulora {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands (matmul inner dims, adapter vs base, ...).
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration value: unsupported bit width, group size that does not
// divide cols, bad hyperparameter, bad CLI flag combination.
struct ConfigError : Error {
  using Error::Error;
};

// A value fell outside its representable domain (code >= 2^bits, row index
// past the end, label >= class count).
struct RangeError : Error {
  using Error::Error;
};

// API misuse: reading gradients before backward(), non-scalar loss, a custom
// function returning the wrong number of gradients.
struct ContractError : Error {
  using Error::Error;
};

// Numerical failure: Hessian not positive definite after damping, NaN
// gradient, diverged loss.
struct NumericError : Error {
  using Error::Error;
};

// Filesystem-level failure (missing file, short write).
struct IoError : Error {
  using Error::Error;
};

// Malformed serialized data. `kind` distinguishes the failure; `offset` is the
// byte position at which parsing gave up (0 when not meaningful).
struct FormatError : Error {
  enum class Kind { BadMagic, BadVersion, Truncated, BadField };

  FormatError(Kind k, std::size_t off, const std::string& msg)
      : Error(msg), kind(k), offset(off) {}

  Kind kind;
  std::size_t offset;
};

}  // namespace modulora
