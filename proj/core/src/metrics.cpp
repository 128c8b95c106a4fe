#include "uwbfgo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

namespace uwbfgo {

Pose align_umeyama(const std::vector<Vector3>& estimated,
                   const std::vector<Vector3>& reference) {
  if (estimated.size() != reference.size()) {
    throw DegenerateAlignment("alignment needs sequences of equal length");
  }
  const std::size_t n = estimated.size();
  if (n < 3) {
    throw DegenerateAlignment("alignment needs at least 3 point pairs, got " +
                              std::to_string(n));
  }

  Vector3 mean_e = Vector3::Zero(), mean_r = Vector3::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    mean_e += estimated[k];
    mean_r += reference[k];
  }
  mean_e /= static_cast<double>(n);
  mean_r /= static_cast<double>(n);

  Matrix3 sigma = Matrix3::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    sigma += (reference[k] - mean_r) * (estimated[k] - mean_e).transpose();
  }
  sigma /= static_cast<double>(n);

  Eigen::JacobiSVD<Matrix3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector3 d = svd.singularValues();
  // Rotation is unconstrained about a collinear point set's axis.
  if (!(d(1) > 1e-12 * std::max(1.0, d(0)))) {
    throw DegenerateAlignment("reference points are collinear or coincident");
  }
  Matrix3 s = Matrix3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    s(2, 2) = -1.0;
  }
  const Matrix3 rot = svd.matrixU() * s * svd.matrixV().transpose();
  const Rotation3 rotation(rot);
  return Pose(rotation, mean_r - rotation * mean_e);
}

TrajectoryErrorReport trajectory_error(const std::vector<TimedPose>& estimated,
                                       const std::vector<TimedPose>& reference,
                                       bool pre_align, double assoc_tolerance) {
  // Nearest-timestamp association against the (sorted) reference.
  std::vector<double> ref_times(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) ref_times[i] = reference[i].t;
  if (!std::is_sorted(ref_times.begin(), ref_times.end())) {
    throw std::invalid_argument("reference trajectory must be time-sorted");
  }

  std::vector<Vector3> est_pts, ref_pts;
  std::vector<double> times;
  for (const auto& e : estimated) {
    const auto it = std::lower_bound(ref_times.begin(), ref_times.end(), e.t);
    std::size_t best = ref_times.size();
    double best_dt = assoc_tolerance;
    for (const auto idx : {it - ref_times.begin(), it - ref_times.begin() - 1}) {
      if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(ref_times.size())) continue;
      const double dt = std::abs(ref_times[idx] - e.t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = static_cast<std::size_t>(idx);
      }
    }
    if (best == ref_times.size()) continue;
    est_pts.push_back(e.pose.translation);
    ref_pts.push_back(reference[best].pose.translation);
    times.push_back(e.t);
  }
  if (est_pts.empty()) {
    throw EmptyAssociation("no estimate/reference pairs within " +
                           std::to_string(assoc_tolerance) + " s");
  }

  TrajectoryErrorReport report;
  report.alignment = pre_align ? align_umeyama(est_pts, ref_pts) : Pose::identity();
  report.times = std::move(times);
  report.pairs = est_pts.size();
  report.errors.reserve(est_pts.size());
  double sq_sum = 0.0;
  report.max = 0.0;
  report.min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < est_pts.size(); ++k) {
    const double err = (ref_pts[k] - transform_point(report.alignment, est_pts[k])).norm();
    report.errors.push_back(err);
    sq_sum += err * err;
    report.max = std::max(report.max, err);
    report.min = std::min(report.min, err);
  }
  report.rmse = std::sqrt(sq_sum / static_cast<double>(report.pairs));
  return report;
}

AnchorErrorReport anchor_error(const AnchorMap& estimated, const AnchorMap& reference) {
  if (estimated.size() != reference.size()) {
    throw GaugeMismatch("anchor maps differ in size");
  }
  AnchorErrorReport report;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    const auto& est = estimated.at(i);
    const auto& ref = reference.at(i);
    // The estimate's gauge decides which scalars are scored; the reference
    // only has to supply matching ids.
    if (est.id != ref.id) {
      throw GaugeMismatch("anchor '" + est.id + "' missing from reference (got '" +
                          ref.id + "')");
    }
    static constexpr char kAxis[3] = {'x', 'y', 'z'};
    for (int a = 0; a < 3; ++a) {
      if (est.fixed[a]) continue;
      AnchorScalarError s;
      s.name = est.id + "." + kAxis[a];
      s.estimate = est.position(a);
      s.reference = ref.position(a);
      s.error = std::abs(s.estimate - s.reference);
      sq_sum += s.error * s.error;
      report.scalars.push_back(std::move(s));
    }
  }
  report.rmse = report.scalars.empty()
                    ? 0.0
                    : std::sqrt(sq_sum / static_cast<double>(report.scalars.size()));
  return report;
}

}  // namespace uwbfgo
