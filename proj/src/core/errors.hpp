#pragma once

#include <stdexcept>
#include <string>

namespace graphrep {

// Bad flags or config values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid input data: malformed files, graph violations, domain errors.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatch; message names both shapes.
struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

// NaN/Inf, divergence, non-deterministic objective.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace graphrep
