#include "uwbfgo/geometry.hpp"

#include <cmath>

namespace uwbfgo {

namespace {
// Below this rotation angle the closed-form coefficients of exp/log are
// replaced by their 2nd-order Taylor expansions.
constexpr double kSmallAngle = 1e-6;
}  // namespace

const char* to_string(FrameId frame) {
  switch (frame) {
    case FrameId::Robot: return "robot";
    case FrameId::Lidar: return "lidar";
    case FrameId::Map: return "map";
    case FrameId::Uwb: return "uwb";
  }
  return "unknown";
}

Rotation3 Rotation3::rot_x(double angle) {
  return Rotation3(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Vector3::UnitX())));
}

Rotation3 Rotation3::rot_y(double angle) {
  return Rotation3(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Vector3::UnitY())));
}

Rotation3 Rotation3::rot_z(double angle) {
  return Rotation3(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Vector3::UnitZ())));
}

Rotation3 Rotation3::exp(const Vector3& w) {
  const double theta = w.norm();
  double scale;  // sin(theta/2) / theta
  if (theta < kSmallAngle) {
    scale = 0.5 - theta * theta / 48.0;
  } else {
    scale = std::sin(0.5 * theta) / theta;
  }
  Eigen::Quaterniond q;
  q.w() = std::cos(0.5 * theta);
  q.vec() = scale * w;
  return Rotation3(q);
}

Vector3 Rotation3::log() const {
  // Constructor keeps w >= 0, so the angle 2*atan2(|v|, w) lies in [0, pi]
  // and the formula stays well conditioned all the way to pi.
  const double vnorm = q_.vec().norm();
  const double w = q_.w();
  if (vnorm < kSmallAngle) {
    // theta/sin(theta/2) ~ 2 + vnorm^2/(3 w^2) * w ... expanded around 0
    return (2.0 / w) * (1.0 - vnorm * vnorm / (3.0 * w * w)) * q_.vec();
  }
  const double theta = 2.0 * std::atan2(vnorm, w);
  return (theta / vnorm) * q_.vec();
}

double Rotation3::angle_to(const Rotation3& other) const {
  return (inverse() * other).log().norm();
}

Matrix4 Pose::matrix() const {
  Matrix4 m = Matrix4::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

Pose inverse(const Pose& a) {
  const Rotation3 rinv = a.rotation.inverse();
  return Pose(rinv, -(rinv * a.translation));
}

Vector3 transform_point(const Pose& a, const Vector3& p) {
  return a.rotation * p + a.translation;
}

Matrix3 hat(const Vector3& w) {
  Matrix3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

Vector6 se3_log(const Pose& a) {
  const Vector3 w = a.rotation.log();
  const double theta = w.norm();
  const Matrix3 W = hat(w);

  // V^{-1} = I - W/2 + c * W^2 with c = (1 - (theta/2) cot(theta/2)) / theta^2.
  double c;
  if (theta < kSmallAngle) {
    c = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double half = 0.5 * theta;
    c = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  const Matrix3 v_inv = Matrix3::Identity() - 0.5 * W + c * W * W;

  Vector6 tangent;
  tangent.head<3>() = w;
  tangent.tail<3>() = v_inv * a.translation;
  return tangent;
}

Pose se3_exp(const Vector6& tangent) {
  const Vector3 w = tangent.head<3>();
  const Vector3 rho = tangent.tail<3>();
  const double theta = w.norm();
  const Matrix3 W = hat(w);

  // V = I + a * W + b * W^2, a = (1-cos)/theta^2, b = (theta-sin)/theta^3.
  double a, b;
  if (theta < kSmallAngle) {
    a = 0.5 - theta * theta / 24.0;
    b = 1.0 / 6.0 - theta * theta / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / (theta * theta);
    b = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  const Matrix3 v = Matrix3::Identity() + a * W + b * W * W;

  return Pose(Rotation3::exp(w), v * rho);
}

PoseDelta pose_delta(const Pose& a, const Pose& b) {
  PoseDelta d;
  d.rotation_rad = a.rotation.angle_to(b.rotation);
  d.translation_m = (a.translation - b.translation).norm();
  return d;
}

Pose project_to_yaw(const Pose& a) {
  const Matrix3 m = a.rotation.matrix();
  const double yaw = std::atan2(m(1, 0), m(0, 0));
  return Pose(Rotation3::rot_z(yaw), a.translation);
}

}  // namespace uwbfgo
