#pragma once

#include <stdexcept>
#include <string>

namespace nvae {

/// Operand shapes do not conform; the message names both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside a function's mathematical domain (lgamma(x <= 0), class index out of range...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A forward op produced NaN or Inf.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated file (IDX, checkpoint).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad configuration; `line` is 1-based, 0 when not tied to a file line.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line(line) {}
  int line;
};

/// A required input file does not exist.
struct MissingInput : std::runtime_error {
  explicit MissingInput(const std::string& path) : std::runtime_error("input file not found: " + path), path(path) {}
  std::string path;
};

}  // namespace nvae
