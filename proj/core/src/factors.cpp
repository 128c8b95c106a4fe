#include "uwbfgo/factors.hpp"

namespace uwbfgo {

Vector6 relative_pose_residual(const Pose& est_curr, const Pose& est_prev,
                               const Pose& meas_curr, const Pose& meas_prev) {
  const Pose est_rel = compose(inverse(est_prev), est_curr);
  const Pose meas_rel = compose(inverse(meas_prev), meas_curr);
  return se3_log(compose(inverse(meas_rel), est_rel));
}

Vector3 uwb_position_residual(const Pose& est_global, const UwbFix& fix) {
  return fix.position - est_global.translation;
}

Vector3 frame_transform_residual(const Pose& t_um, const UwbFix& fix,
                                 const Vector3& odom_position) {
  return fix.position - transform_point(t_um, odom_position);
}

double range_residual(const Vector3& anchor_position, const Vector3& robot_position,
                      const RangeMeasurement& meas) {
  return (anchor_position - robot_position).norm() - meas.range;
}

Vector3 extract_position(const Pose& pose) { return pose.translation; }

void add_relative_pose_factor(Problem& problem, VariableId curr, VariableId prev,
                              const Pose& meas_curr, const Pose& meas_prev,
                              Loss loss, double weight) {
  problem.add_residual(
      {curr, prev}, 6,
      [meas_curr, meas_prev](std::span<const Value> v) -> Eigen::VectorXd {
        return relative_pose_residual(as_pose(v[0]), as_pose(v[1]), meas_curr, meas_prev);
      },
      loss, weight, "relative_pose");
}

void add_uwb_position_factor(Problem& problem, VariableId pose, const UwbFix& fix,
                             Loss loss, double weight) {
  problem.add_residual(
      {pose}, 3,
      [fix](std::span<const Value> v) -> Eigen::VectorXd {
        return uwb_position_residual(as_pose(v[0]), fix);
      },
      loss, weight, "uwb_position",
      [](std::span<const Value> v, std::span<Eigen::MatrixXd> jac) {
        // r = fix - t; right-multiplicative tangent: dt = R*rho, so
        // dr/drho = -R and dr/domega = 0.
        const Matrix3 r = as_pose(v[0]).rotation.matrix();
        jac[0] = Eigen::MatrixXd::Zero(3, 6);
        jac[0].rightCols<3>() = -r;
      });
}

void add_frame_transform_factor(Problem& problem, VariableId t_um, const UwbFix& fix,
                                const Vector3& odom_position, Loss loss,
                                double weight) {
  problem.add_residual(
      {t_um}, 3,
      [fix, odom_position](std::span<const Value> v) -> Eigen::VectorXd {
        return frame_transform_residual(as_pose(v[0]), fix, odom_position);
      },
      loss, weight, "frame_transform",
      [odom_position](std::span<const Value> v, std::span<Eigen::MatrixXd> jac) {
        // r = fix - (R p + t); T*exp(d): d(R p)/domega = -R hat(p), dt = R rho.
        const Matrix3 r = as_pose(v[0]).rotation.matrix();
        jac[0] = Eigen::MatrixXd::Zero(3, 6);
        jac[0].leftCols<3>() = r * hat(odom_position);
        jac[0].rightCols<3>() = -r;
      });
}

void add_range_factor(Problem& problem, VariableId anchor,
                      const Vector3& robot_position, const RangeMeasurement& meas,
                      Loss loss, double weight, long* coincidences) {
  problem.add_residual(
      {anchor}, 1,
      [robot_position, meas](std::span<const Value> v) -> Eigen::VectorXd {
        Eigen::VectorXd r(1);
        r[0] = range_residual(as_point(v[0]), robot_position, meas);
        return r;
      },
      loss, weight, "range",
      [robot_position, coincidences](std::span<const Value> v,
                                     std::span<Eigen::MatrixXd> jac) {
        const Vector3 diff = as_point(v[0]) - robot_position;
        const double dist = diff.norm();
        jac[0].resize(1, 3);
        if (dist <= 0.0) {
          // Anchor coincides with the robot: direction undefined.
          jac[0].setZero();
          if (coincidences) ++*coincidences;
        } else {
          jac[0] = diff.transpose() / dist;
        }
      });
}

}  // namespace uwbfgo
