#pragma once

#include <stdexcept>
#include <string>

namespace hisa {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape or dimensionality violation.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid value in otherwise well-shaped data (bad token id, empty input, ...).
struct ValueError : Error {
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

/// File or stream failure.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Bad configuration: unknown key, unparsable value, invalid combination.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Non-finite value detected where the math requires finite numbers.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace hisa
