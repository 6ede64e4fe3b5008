#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aakt {

/// Invalid hyperparameter, column map or other user-supplied configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input text. Carries the 1-based line number of the offending row.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Source data that cannot be interpreted consistently (e.g. conflicting
/// duplicate rows).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss or gradient that went non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aakt
