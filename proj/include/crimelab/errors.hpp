#pragma once

#include <stdexcept>
#include <string>

namespace crimelab {

/// Missing or misnamed input columns, malformed config files.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Structural CSV problems (unterminated quotes).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A value outside the domain of the requested computation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Input tables that are individually valid but do not fit together
/// (a covariate gap, an outcome the panel does not carry).
struct MismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fixed-effect absorption did not reach tolerance.
struct ConvergenceError : std::runtime_error {
  ConvergenceError(const std::string& what, double last_change)
      : std::runtime_error(what), last_change(last_change) {}
  double last_change;
};

/// Every regressor was dropped, or the bread matrix is singular.
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace crimelab
