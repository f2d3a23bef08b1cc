#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crihp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error {
  using Error::Error;
};

struct FormatError : Error {
  FormatError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

struct ValidationError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct SimulationError : Error {
  using Error::Error;
};

/// Raised on non-finite losses and truncated next-event densities.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace crihp
