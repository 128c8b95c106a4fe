#pragma once

#include <string>

#include "uwbfgo/geometry.hpp"
#include "uwbfgo/solver.hpp"

namespace uwbfgo {

/// One LiDAR-odometry pose in the map frame.
struct OdometryPose {
  double t = 0.0;  // seconds
  Pose pose;       // T^m_l at time t
};

/// Timestamped pose in whatever frame the context dictates.
using TimedPose = OdometryPose;

/// Robot position in the UWB frame, produced by trilateration.
struct UwbFix {
  double t = 0.0;
  Vector3 position = Vector3::Zero();
};

/// One tag-to-anchor distance reading.
struct RangeMeasurement {
  double t = 0.0;
  std::string anchor_id;
  double range = 0.0;  // meters, > 0
};

/// Relative-pose residual between the estimated and measured motion from
/// k-1 to k, as a 6-vector log-map error. Relative motions are taken in the
/// body frame (prev^-1 * curr) so the residual is invariant to a common
/// left-multiplied frame offset on the estimates.
Vector6 relative_pose_residual(const Pose& est_curr, const Pose& est_prev,
                               const Pose& meas_curr, const Pose& meas_prev);

/// Residual pulling the estimated global pose toward a UWB position fix:
/// fix.position - translation(T_gk).
Vector3 uwb_position_residual(const Pose& est_global, const UwbFix& fix);

/// Residual constraining the map-to-UWB frame transform:
/// fix.position - T_um * odom_position.
Vector3 frame_transform_residual(const Pose& t_um, const UwbFix& fix,
                                 const Vector3& odom_position);

/// Range residual |anchor - robot| - measured_range.
double range_residual(const Vector3& anchor_position, const Vector3& robot_position,
                      const RangeMeasurement& meas);

/// Position-extraction h_l: the translation component of a pose.
Vector3 extract_position(const Pose& pose);

// --- residual-block builders --------------------------------------------
// Each registers one residual block on the problem; the measurement data is
// captured by value.

void add_relative_pose_factor(Problem& problem, VariableId curr, VariableId prev,
                              const Pose& meas_curr, const Pose& meas_prev,
                              Loss loss = Loss::identity(), double weight = 1.0);

void add_uwb_position_factor(Problem& problem, VariableId pose, const UwbFix& fix,
                             Loss loss, double weight = 1.0);

void add_frame_transform_factor(Problem& problem, VariableId t_um, const UwbFix& fix,
                                const Vector3& odom_position, Loss loss,
                                double weight = 1.0);

/// Range factor with the anchor position as the variable and the robot
/// position constant. At anchor/robot coincidence the Jacobian is zeroed and
/// `coincidences`, when given, is incremented.
void add_range_factor(Problem& problem, VariableId anchor,
                      const Vector3& robot_position, const RangeMeasurement& meas,
                      Loss loss, double weight = 1.0,
                      long* coincidences = nullptr);

}  // namespace uwbfgo
