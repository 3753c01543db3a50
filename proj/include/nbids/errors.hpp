#pragma once

#include <stdexcept>
#include <string>

namespace nbids {

// Every library failure derives from Error so callers can catch the family;
// the CLI maps the concrete type onto an exit code.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// API misuse, such as calling backward without a forward cache.
class UsageError : public Error {
public:
  using Error::Error;
};

/// Class label outside the valid range.
class LabelError : public Error {
public:
  using Error::Error;
};

/// A parameter present on one side of a keyed operation is missing on the other.
class KeyError : public Error {
public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CSV contents, class counts).
class DataError : public Error {
public:
  using Error::Error;
};

/// A required input path does not exist.
class PathError : public Error {
public:
  using Error::Error;
};

/// Container file has a bad magic, bad checksum or an unknown record.
class FormatError : public Error {
public:
  using Error::Error;
};

class VersionError : public FormatError {
public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
  using FormatError::FormatError;
};

} // namespace nbids
