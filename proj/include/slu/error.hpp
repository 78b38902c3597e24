// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by every module. The CLI maps ConfigError,
// ParseError and DataError to exit code 2 and TrainingAborted to exit code 3.

#pragma once

#include <stdexcept>
#include <string>

namespace slu {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries the path and line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input whose content is inconsistent with the model
/// (unknown label, id out of range, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training hit a non-finite loss or gradient.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace slu
