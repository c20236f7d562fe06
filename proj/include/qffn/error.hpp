#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qffn {

/// Invalid configuration value. The message names the offending field.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Mismatched tensor, vector or sequence dimensions.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number of the offending row.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Raised when the training loss stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace qffn
