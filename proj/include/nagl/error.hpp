#pragma once

#include <stdexcept>
#include <string>

namespace nagl {

// Exit codes used by the command-line tool.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// Malformed files: bad magic, version, truncation, unparsable manifest lines.
class FormatError : public Error {
 public:
  using Error::Error;
};

// I/O failures and dataset-level problems (missing samples, inconsistent labels).
class DataError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor or map dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

}  // namespace nagl
