#ifndef BARLOW_ERROR_HPP_
#define BARLOW_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace barlow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible matrix shapes or mismatched caches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition on user-supplied values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, degenerate statistics and similar numerical failures.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset / checkpoint files. Carries the offending line when known.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace barlow

#endif  // BARLOW_ERROR_HPP_
