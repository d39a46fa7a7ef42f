#pragma once

#include <stdexcept>
#include <string>

namespace mlvtg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Non-finite values or diverging computation.
struct NumericError : Error {
  using Error::Error;
};

// Malformed, truncated, or mis-typed on-disk data.
struct FormatError : Error {
  using Error::Error;
};

// Sequence exceeds a fixed capacity (e.g. positional tables).
struct CapacityError : Error {
  using Error::Error;
};

// Operation invoked in a mode that does not support it.
struct ModeError : Error {
  using Error::Error;
};

// A verification oracle's precondition was violated.
struct OracleError : Error {
  using Error::Error;
};

}  // namespace mlvtg
