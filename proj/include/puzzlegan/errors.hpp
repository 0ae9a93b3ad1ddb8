#pragma once

#include <stdexcept>
#include <string>

namespace puzzlegan {

// Bad input: malformed files, inconsistent specs, out-of-range ids.
// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Divergence or other numeric failure at runtime (exit code 2).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace puzzlegan
