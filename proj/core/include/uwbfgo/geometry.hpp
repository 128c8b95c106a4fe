#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace uwbfgo {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix4 = Eigen::Matrix4d;

/// Coordinate frames. The UWB frame is the human-known fixed frame and
/// doubles as the global frame, so Global aliases Uwb.
enum class FrameId { Robot, Lidar, Map, Uwb, Global = Uwb };

const char* to_string(FrameId frame);

/// 3D rotation stored as a unit quaternion (w, x, y, z). Renormalized on
/// construction and after every composition; q and -q represent the same
/// rotation and compare equal.
class Rotation3 {
 public:
  Rotation3() : q_(1.0, 0.0, 0.0, 0.0) {}
  Rotation3(double w, double x, double y, double z) : q_(w, x, y, z) { normalize(); }
  explicit Rotation3(const Eigen::Quaterniond& q) : q_(q) { normalize(); }
  explicit Rotation3(const Matrix3& m) : q_(m) { normalize(); }

  static Rotation3 identity() { return Rotation3(); }
  static Rotation3 rot_x(double angle);
  static Rotation3 rot_y(double angle);
  static Rotation3 rot_z(double angle);

  /// SO(3) exponential: rotation by |w| radians about w/|w|.
  static Rotation3 exp(const Vector3& w);

  /// SO(3) logarithm, rotation angle in [0, pi].
  Vector3 log() const;

  Rotation3 inverse() const { return Rotation3(q_.conjugate()); }
  Rotation3 operator*(const Rotation3& rhs) const { return Rotation3(q_ * rhs.q_); }
  Vector3 operator*(const Vector3& p) const { return q_ * p; }

  Matrix3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  double angle() const { return log().norm(); }

  /// Angle of the relative rotation this->inverse() * other, in [0, pi].
  double angle_to(const Rotation3& other) const;

  /// Double-cover aware equality: q and -q compare equal.
  bool is_approx(const Rotation3& other, double tol = 1e-9) const {
    return angle_to(other) <= tol;
  }

 private:
  void normalize() {
    q_.normalize();
    if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
  }

  Eigen::Quaterniond q_;
};

/// Rigid transform on SE(3): p_out = rotation * p_in + translation.
struct Pose {
  Rotation3 rotation;
  Vector3 translation = Vector3::Zero();

  Pose() = default;
  Pose(const Rotation3& r, const Vector3& t) : rotation(r), translation(t) {}

  static Pose identity() { return Pose(); }

  /// 4x4 homogeneous matrix.
  Matrix4 matrix() const;
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);
Vector3 transform_point(const Pose& a, const Vector3& p);

/// SE(3) logarithm. Tangent layout is (omega, rho): rotation first,
/// translation part second. Rotation angle in [0, pi].
Vector6 se3_log(const Pose& a);

/// SE(3) exponential, inverse of se3_log on its principal domain.
Pose se3_exp(const Vector6& tangent);

/// Skew-symmetric matrix such that hat(w) * v == w.cross(v).
Matrix3 hat(const Vector3& w);

/// Rotation angle (rad) and translation distance (m) between two poses.
struct PoseDelta {
  double rotation_rad = 0.0;
  double translation_m = 0.0;
};
PoseDelta pose_delta(const Pose& a, const Pose& b);

/// Yaw-only projection of a pose: keeps translation, replaces the rotation
/// by the z-axis rotation closest to it in heading.
Pose project_to_yaw(const Pose& a);

}  // namespace uwbfgo
