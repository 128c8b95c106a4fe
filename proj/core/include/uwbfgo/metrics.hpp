#pragma once

#include <string>
#include <vector>

#include "uwbfgo/errors.hpp"
#include "uwbfgo/factors.hpp"
#include "uwbfgo/geometry.hpp"
#include "uwbfgo/trilateration.hpp"

namespace uwbfgo {

struct TrajectoryErrorReport {
  double rmse = 0.0;  // meters
  double max = 0.0;
  double min = 0.0;
  std::vector<double> times;   // estimate timestamps of the associated pairs
  std::vector<double> errors;  // absolute position error per pair
  Pose alignment;              // transform applied to the estimate
  std::size_t pairs = 0;
};

struct AnchorScalarError {
  std::string name;  // "<anchor_id>.<x|y|z>", free coordinates only
  double estimate = 0.0;
  double reference = 0.0;
  double error = 0.0;  // |estimate - reference|
};

struct AnchorErrorReport {
  std::vector<AnchorScalarError> scalars;
  double rmse = 0.0;  // over the free scalars
};

/// Least-squares rigid transform (rotation + translation, no scale)
/// minimizing sum |reference_k - T * estimated_k|^2. Throws
/// DegenerateAlignment on <3 pairs or a collinear reference.
Pose align_umeyama(const std::vector<Vector3>& estimated,
                   const std::vector<Vector3>& reference);

/// Absolute position error statistics over nearest-timestamp pairs (within
/// `assoc_tolerance` seconds). With pre_align the estimate is first fitted to
/// the reference by align_umeyama. Throws EmptyAssociation when no pair
/// associates.
TrajectoryErrorReport trajectory_error(const std::vector<TimedPose>& estimated,
                                       const std::vector<TimedPose>& reference,
                                       bool pre_align,
                                       double assoc_tolerance = 0.05);

/// Per-free-scalar absolute differences between two anchor maps sharing ids
/// and gauge masks. Throws GaugeMismatch otherwise.
AnchorErrorReport anchor_error(const AnchorMap& estimated, const AnchorMap& reference);

}  // namespace uwbfgo
