// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace span {

/// Root of every error thrown by the library. The CLI maps subclasses onto
/// its exit codes (2 usage/config, 3 data, 4 numeric).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ReachabilityError : public Error {
 public:
  using Error::Error;
};

class CommandError : public Error {
 public:
  using Error::Error;
};

class CompletenessError : public Error {
 public:
  using Error::Error;
};

// Data-file errors. Each one names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ManifestMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace span
