#pragma once

#include <stdexcept>
#include <string>

namespace ddf2pol {

/// Tensor extents that do not fit the requested operation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An API called with arguments outside its contract (bad label, non-scalar loss, ...).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk data.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Data that is well-formed but unusable (empty class, zero reference row, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid synthetic scene description.
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ddf2pol
