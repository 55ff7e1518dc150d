#pragma once

#include <stdexcept>
#include <string>

namespace deeprnn {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed flags, manifests or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Bad or missing input data (empty corpora, unreadable files, mismatched lengths).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent tensor or model dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Failure while training or decoding.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace deeprnn
