#pragma once

#include <stdexcept>
#include <string>

namespace mcdti {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between containers.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed file content (NIfTI, scheme, checkpoint, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad command-line usage or config keys; maps to CLI exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: NaN gradients, divergence, rank-deficient designs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// I/O failure reading or writing a file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcdti
