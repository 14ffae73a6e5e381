#pragma once

#include <stdexcept>
#include <string>

namespace fillscape {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad argument: dimension mismatch, invalid parameter, malformed input.
struct ArgumentError : Error {
  using Error::Error;
};

/// Operation not supported for the requested dimension or norm kind.
struct UnsupportedError : Error {
  using Error::Error;
};

/// Iterative solver hit its iteration cap before certifying convergence.
struct ConvergenceError : Error {
  using Error::Error;
};

/// Two-point solver failed to connect; carries the best residual seen.
struct SolverError : Error {
  double best_residual;
  SolverError(const std::string& msg, double resid)
      : Error(msg), best_residual(resid) {}
};

/// Point outside the valid chart (Poincare disc, interpolation collar).
struct ChartError : Error {
  using Error::Error;
};

/// Rank-deficient tangent data or non-spanning facet set.
struct DegenerateError : Error {
  using Error::Error;
};

}  // namespace fillscape
