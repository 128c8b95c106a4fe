#pragma once

#include <stdexcept>
#include <string>

namespace uwbfgo {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fewer than three usable ranges for a position fix.
struct InsufficientRanges : Error {
  using Error::Error;
};

/// Iterative positioning diverged (cost increased repeatedly).
struct NoConvergence : Error {
  using Error::Error;
};

/// Inter-anchor range matrix violates metric consistency.
struct InconsistentRanges : Error {
  using Error::Error;
};

/// Reference points too degenerate for rigid alignment.
struct DegenerateAlignment : Error {
  using Error::Error;
};

/// No time-associated pairs between estimate and reference.
struct EmptyAssociation : Error {
  using Error::Error;
};

/// Anchor ids or fixed masks differ between two anchor maps.
struct GaugeMismatch : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Malformed or missing data files.
struct DataError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct PipelineError : Error {
  using Error::Error;
};

}  // namespace uwbfgo
