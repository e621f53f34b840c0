#pragma once

#include <stdexcept>
#include <string>

namespace pild {

/// Shape or dimensionality mismatch between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value produced, or a numeric procedure failed to converge.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration (bad key, bad value, violated invariant).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File I/O or on-disk format problem (bad magic, truncation, missing file).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pild
