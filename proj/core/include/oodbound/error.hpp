#pragma once

#include <stdexcept>
#include <string>

namespace oodbound {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed, inconsistent or unusable input data (files, datasets, models).
class DataError : public Error {
public:
  using Error::Error;
};

/// A model file that cannot be trusted: wrong version, truncated, or tampered.
class ModelFormatError : public DataError {
public:
  enum class Kind { Version, Corrupt, Checksum };

  ModelFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

/// Numerical breakdown: non-finite loss, degenerate projection, failed gradient check.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace oodbound
