#include "uwbfgo/trilateration.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>

#include <Eigen/Cholesky>

namespace uwbfgo {

void AnchorMap::add(std::string id, const Vector3& position,
                    const std::array<bool, 3>& fixed) {
  if (find(id) != nullptr) {
    throw std::invalid_argument("duplicate anchor id '" + id + "'");
  }
  entries_.push_back(AnchorEntry{std::move(id), position, fixed});
}

const AnchorEntry* AnchorMap::find(const std::string& id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

Vector3 AnchorMap::centroid() const {
  Vector3 c = Vector3::Zero();
  if (entries_.empty()) return c;
  for (const auto& e : entries_) c += e.position;
  return c / static_cast<double>(entries_.size());
}

namespace {

struct RangeRow {
  Vector3 anchor;
  double range;
};

double range_cost(const std::vector<RangeRow>& rows, const Vector3& p) {
  double c = 0.0;
  for (const auto& row : rows) {
    const double r = (row.anchor - p).norm() - row.range;
    c += r * r;
  }
  return c;
}

}  // namespace

TrilaterationResult trilaterate_tag(
    const std::vector<std::pair<std::string, double>>& ranges,
    const AnchorMap& anchors, const Vector3& initial_guess,
    const std::array<bool, 3>& fixed_axes) {
  if (!initial_guess.allFinite()) {
    throw std::invalid_argument("trilaterate_tag: non-finite initial guess");
  }

  std::vector<RangeRow> rows;
  std::set<std::string> distinct;
  for (const auto& [id, r] : ranges) {
    const AnchorEntry* a = anchors.find(id);
    if (a == nullptr || !std::isfinite(r) || r <= 0.0) continue;
    rows.push_back(RangeRow{a->position, r});
    distinct.insert(id);
  }
  if (distinct.size() < 3) {
    throw InsufficientRanges("trilaterate_tag: need ranges to >=3 distinct anchors, got " +
                             std::to_string(distinct.size()));
  }

  std::vector<int> free_axes;
  for (int a = 0; a < 3; ++a) {
    if (!fixed_axes[a]) free_axes.push_back(a);
  }

  Vector3 p = initial_guess;
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(free_axes.size());
  double cost = range_cost(rows, p);
  int increases = 0;
  int iter = 0;

  if (m > 0) {
    Eigen::MatrixXd jac(n, m);
    Eigen::VectorXd res(n);
    for (iter = 1; iter <= 100; ++iter) {
      for (int i = 0; i < n; ++i) {
        const Vector3 diff = p - rows[i].anchor;
        const double dist = diff.norm();
        res(i) = dist - rows[i].range;
        if (dist < 1e-12) {
          jac.row(i).setZero();  // direction undefined at an anchor
        } else {
          for (int a = 0; a < m; ++a) jac(i, a) = diff(free_axes[a]) / dist;
        }
      }
      Eigen::MatrixXd h = jac.transpose() * jac;
      h.diagonal().array() += 1e-14;
      const Eigen::VectorXd step = h.ldlt().solve(-jac.transpose() * res);
      if (!step.allFinite()) {
        throw NoConvergence("trilaterate_tag: singular normal equations");
      }
      for (int a = 0; a < m; ++a) p(free_axes[a]) += step(a);
      const double new_cost = range_cost(rows, p);
      increases = new_cost > cost ? increases + 1 : 0;
      if (increases >= 5) {
        throw NoConvergence("trilaterate_tag: cost increased 5 consecutive steps");
      }
      cost = new_cost;
      if (step.lpNorm<Eigen::Infinity>() < 1e-12) break;
    }
  }

  TrilaterationResult out;
  out.position = p;
  out.rms = std::sqrt(cost / static_cast<double>(n));
  out.iterations = iter;
  return out;
}

namespace {

// Planar gauge roles extracted from the template map.
struct GaugeRoles {
  int origin = 0;
  int axis = -1;
  int axis_free_coord = 0;  // 0 if the axis anchor slides along x, 1 along y
  std::vector<int> rest;    // remaining anchors in template order
};

GaugeRoles parse_gauge(const AnchorMap& gauge) {
  GaugeRoles roles;
  const auto& origin = gauge.at(0);
  if (!origin.fixed[0] || !origin.fixed[1] || origin.position.x() != 0.0 ||
      origin.position.y() != 0.0) {
    throw ConfigError("self-calibration gauge must pin the first anchor at x=y=0");
  }
  for (std::size_t i = 1; i < gauge.size(); ++i) {
    const auto& e = gauge.at(i);
    const bool fx = e.fixed[0];
    const bool fy = e.fixed[1];
    if (fx && fy) {
      throw ConfigError("anchor '" + e.id + "': only the first anchor may fix both x and y");
    }
    if (fx || fy) {
      if (roles.axis >= 0) {
        throw ConfigError("gauge must pin a planar coordinate of exactly one non-origin anchor");
      }
      const double pinned = fx ? e.position.x() : e.position.y();
      if (pinned != 0.0) {
        throw ConfigError("anchor '" + e.id + "': pinned planar coordinate must be 0");
      }
      roles.axis = static_cast<int>(i);
      roles.axis_free_coord = fx ? 1 : 0;
    } else {
      roles.rest.push_back(static_cast<int>(i));
    }
  }
  if (roles.axis < 0) {
    throw ConfigError("gauge must pin a planar coordinate of exactly one non-origin anchor");
  }
  return roles;
}

void check_triangle_slack(const Eigen::MatrixXd& d, const AnchorMap& gauge,
                          const char* label) {
  const int n = static_cast<int>(d.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        const double detour = d(i, k) + d(k, j);
        if (d(i, j) > 1.05 * detour) {
          throw InconsistentRanges(std::string(label) + " range " + gauge.at(i).id +
                                   "-" + gauge.at(j).id + " exceeds the detour via " +
                                   gauge.at(k).id + " by more than 5%");
        }
      }
    }
  }
}

}  // namespace

SelfCalibrationResult self_calibrate_anchors(
    const Eigen::MatrixXd& inter_anchor_ranges, const AnchorMap& gauge,
    const std::vector<double>& known_heights) {
  const int n = static_cast<int>(gauge.size());
  if (n < 3) throw DataError("self-calibration needs at least 3 anchors");
  if (inter_anchor_ranges.rows() != n || inter_anchor_ranges.cols() != n) {
    throw DataError("inter-anchor range matrix must be " + std::to_string(n) + "x" +
                    std::to_string(n));
  }
  if (static_cast<int>(known_heights.size()) != n) {
    throw DataError("known_heights must list one height per anchor");
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = inter_anchor_ranges(i, j);
      if (!std::isfinite(v) || v <= 0.0) {
        throw DataError("inter-anchor range " + gauge.at(i).id + "-" + gauge.at(j).id +
                        " is missing or non-positive");
      }
    }
  }

  SelfCalibrationResult out;

  // Symmetrize, then project ranges into the anchor plane using the height gaps.
  Eigen::MatrixXd d = 0.5 * (inter_anchor_ranges + inter_anchor_ranges.transpose());
  d.diagonal().setZero();
  check_triangle_slack(d, gauge, "measured");

  Eigen::MatrixXd pd(n, n);
  pd.setZero();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dz = known_heights[i] - known_heights[j];
      const double sq = d(i, j) * d(i, j) - dz * dz;
      if (sq < 0.0) {
        out.warnings.push_back("projected range " + gauge.at(i).id + "-" + gauge.at(j).id +
                               " clipped to zero (range shorter than the height gap)");
      }
      pd(i, j) = pd(j, i) = std::sqrt(std::max(0.0, sq));
    }
  }
  check_triangle_slack(pd, gauge, "projected");

  const GaugeRoles roles = parse_gauge(gauge);
  const int u_coord = roles.axis_free_coord;  // in-plane axis direction
  const int v_coord = 1 - u_coord;

  // (u, v) plane coordinates per anchor; origin at 0, axis anchor on +u.
  std::vector<Eigen::Vector2d> plane(n, Eigen::Vector2d::Zero());
  const double axis_u = pd(roles.origin, roles.axis);
  if (axis_u < 1e-9) {
    throw InconsistentRanges("origin and axis anchors coincide in the anchor plane");
  }
  plane[roles.axis] = Eigen::Vector2d(axis_u, 0.0);

  std::vector<int> placed_free;
  for (const int j : roles.rest) {
    const double a = pd(roles.origin, j);
    const double b = pd(roles.axis, j);
    const double u = (a * a - b * b + axis_u * axis_u) / (2.0 * axis_u);
    const double v_sq = a * a - u * u;
    if (v_sq < 0.0) {
      out.warnings.push_back("anchor '" + gauge.at(j).id +
                             "' off-axis offset clipped to zero");
    }
    double v = std::sqrt(std::max(0.0, v_sq));
    if (!placed_free.empty()) {
      // Mirror ambiguity: match ranges to the anchors already placed off-axis.
      double err_pos = 0.0, err_neg = 0.0;
      for (const int p : placed_free) {
        err_pos += std::abs((Eigen::Vector2d(u, v) - plane[p]).norm() - pd(p, j));
        err_neg += std::abs((Eigen::Vector2d(u, -v) - plane[p]).norm() - pd(p, j));
      }
      if (err_neg < err_pos) v = -v;
    }
    plane[j] = Eigen::Vector2d(u, v);
    placed_free.push_back(j);
  }

  for (int i = 0; i < n; ++i) {
    Vector3 pos;
    pos(u_coord) = plane[i](0);
    pos(v_coord) = plane[i](1);
    pos(2) = known_heights[i];
    std::array<bool, 3> fixed = gauge.at(i).fixed;
    fixed[2] = true;  // heights are inputs, not estimates
    // Pinned coordinates carry the configured value bit-exactly.
    for (int a = 0; a < 2; ++a) {
      if (fixed[a]) pos(a) = gauge.at(i).position(a);
    }
    out.anchors.add(gauge.at(i).id, pos, fixed);
  }

  double sq_sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double fit = (out.anchors.at(i).position - out.anchors.at(j).position).norm();
      sq_sum += (fit - d(i, j)) * (fit - d(i, j));
      ++pairs;
    }
  }
  out.rms_range_error = std::sqrt(sq_sum / static_cast<double>(pairs));
  return out;
}

SelfCalibrationResult self_calibrate_anchors(
    const std::vector<Eigen::MatrixXd>& range_matrices, const AnchorMap& gauge,
    const std::vector<double>& known_heights) {
  if (range_matrices.empty()) {
    throw DataError("self-calibration needs at least one range matrix");
  }
  const int n = static_cast<int>(gauge.size());
  Eigen::MatrixXd mean_pos = Eigen::MatrixXd::Zero(n, 3);
  SelfCalibrationResult out;
  double rms = 0.0;
  for (std::size_t k = 0; k < range_matrices.size(); ++k) {
    SelfCalibrationResult one = self_calibrate_anchors(range_matrices[k], gauge, known_heights);
    for (int i = 0; i < n; ++i) mean_pos.row(i) += one.anchors.at(i).position.transpose();
    for (const auto& w : one.warnings) {
      out.warnings.push_back("matrix " + std::to_string(k) + ": " + w);
    }
    rms += one.rms_range_error;
    if (k + 1 == range_matrices.size()) out.anchors = std::move(one.anchors);
  }
  const double inv = 1.0 / static_cast<double>(range_matrices.size());
  for (int i = 0; i < n; ++i) {
    Vector3 pos = (mean_pos.row(i) * inv).transpose();
    auto& entry = out.anchors.at(i);
    for (int a = 0; a < 3; ++a) {
      if (!entry.fixed[a]) entry.position(a) = pos(a);
    }
  }
  out.rms_range_error = rms * inv;
  return out;
}

UwbFixStream::UwbFixStream(AnchorMap anchors, double window)
    : anchors_(std::move(anchors)), window_(window) {
  if (!(window > 0.0)) {
    throw std::invalid_argument("uwb fix stream: window must be positive");
  }
}

std::optional<UwbFix> UwbFixStream::push(const RangeMeasurement& m) {
  // Nudge before flooring: timestamps that sit exactly on an epoch boundary
  // land one ulp below it after division and would merge two epochs.
  const long epoch = static_cast<long>(std::floor(m.t / window_ + 1e-9));
  std::optional<UwbFix> fix;
  if (epoch_index_ != epoch && !bucket_.empty()) {
    fix = close_epoch();
    bucket_.clear();
  }
  epoch_index_ = epoch;
  bucket_.push_back(m);
  return fix;
}

std::optional<UwbFix> UwbFixStream::flush() {
  if (bucket_.empty()) return std::nullopt;
  std::optional<UwbFix> fix = close_epoch();
  bucket_.clear();
  return fix;
}

std::optional<UwbFix> UwbFixStream::close_epoch() {
  ++stats_.epochs_total;

  // Average repeated readings from the same anchor within the epoch.
  std::map<std::string, std::pair<double, int>> by_anchor;
  double t_sum = 0.0;
  for (const auto& m : bucket_) {
    auto& [sum, count] = by_anchor[m.anchor_id];
    sum += m.range;
    ++count;
    t_sum += m.t;
  }
  if (by_anchor.size() < 3) {
    ++stats_.epochs_below_min_anchors;
    return std::nullopt;
  }

  std::vector<std::pair<std::string, double>> ranges;
  ranges.reserve(by_anchor.size());
  for (const auto& [id, acc] : by_anchor) {
    ranges.emplace_back(id, acc.first / acc.second);
  }
  const bool fresh = !z_baseline_ && accepted_z_.empty();
  Vector3 guess = last_fix_ ? *last_fix_ : anchors_.centroid();
  try {
    TrilaterationResult res;
    if (z_baseline_) {
      guess.z() = *z_baseline_;
      res = trilaterate_tag(ranges, anchors_, guess, {false, false, true});
    } else if (fresh) {
      res = first_fix(ranges, guess);
    } else {
      res = trilaterate_tag(ranges, anchors_, guess);
      if (const auto med = median_z();
          med && std::abs(res.position.z() - *med) > kMaxZDeviation) {
        ++stats_.epochs_rejected;
        return std::nullopt;
      }
    }
    last_fix_ = res.position;
    if (!z_baseline_) {
      accepted_z_.push_back(res.position.z());
      if (accepted_z_.size() >= kZWindow) {
        z_baseline_ = median_z();
        accepted_z_.clear();
      }
    }
    ++stats_.fixes_emitted;
    return UwbFix{t_sum / static_cast<double>(bucket_.size()), res.position};
  } catch (const Error&) {
    ++stats_.epochs_solve_failed;
    return std::nullopt;
  }
}

TrilaterationResult UwbFixStream::first_fix(
    const std::vector<std::pair<std::string, double>>& ranges,
    const Vector3& guess) const {
  double z_lo = guess.z(), z_hi = guess.z();
  for (const auto& e : anchors_) {
    z_lo = std::min(z_lo, e.position.z());
    z_hi = std::max(z_hi, e.position.z());
  }
  const double pad = std::max(0.5 * (z_hi - z_lo), 0.5);
  const std::array<Vector3, 3> seeds = {
      guess,
      Vector3(guess.x(), guess.y(), z_lo - pad),
      Vector3(guess.x(), guess.y(), z_hi + pad),
  };

  std::vector<TrilaterationResult> basins;
  for (const auto& s : seeds) {
    try {
      basins.push_back(trilaterate_tag(ranges, anchors_, s));
    } catch (const NoConvergence&) {
      // A seed may sit on a watershed; the others still count.
    }
  }
  if (basins.empty()) {
    throw NoConvergence("uwb fix stream: no seed converged for the first epoch");
  }

  double best_rms = basins.front().rms;
  for (const auto& b : basins) best_rms = std::min(best_rms, b.rms);

  // With rough anchors the mirror basin routinely fits *better* than the
  // true one (the erroneous spheres intersect more cleanly there), so fit
  // quality alone cannot rank basins. Anything within an absolute residual
  // slack is treated as equally credible and the prior picks the lowest;
  // a noise-free or well-surveyed setup leaves the mirror far outside the
  // slack and the screening is inert.
  const TrilaterationResult* pick = nullptr;
  for (const auto& b : basins) {
    if (b.rms > best_rms + kBasinRmsSlack) continue;
    if (pick == nullptr || b.position.z() < pick->position.z()) pick = &b;
  }
  return *pick;
}

std::optional<double> UwbFixStream::median_z() const {
  if (accepted_z_.empty()) return std::nullopt;
  std::vector<double> zs(accepted_z_.begin(), accepted_z_.end());
  const auto mid = zs.begin() + static_cast<std::ptrdiff_t>(zs.size() / 2);
  std::nth_element(zs.begin(), mid, zs.end());
  return *mid;
}

std::vector<UwbFix> uwb_fix_stream(const std::vector<RangeMeasurement>& ranges,
                                   const AnchorMap& anchors, double window,
                                   UwbFixStreamStats* stats) {
  UwbFixStream stream(anchors, window);
  std::vector<UwbFix> fixes;
  for (const auto& m : ranges) {
    if (auto fix = stream.push(m)) fixes.push_back(*fix);
  }
  if (auto fix = stream.flush()) fixes.push_back(*fix);
  if (stats != nullptr) *stats = stream.stats();
  return fixes;
}

}  // namespace uwbfgo
