#include "uwbfgo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "uwbfgo/metrics.hpp"

namespace uwbfgo {

void validate(const PipelineOptions& o) {
  if (o.resolve_every < 1) throw ConfigError("resolve_every must be >= 1");
  if (o.recalib_every < 1) throw ConfigError("recalib_every must be >= 1");
  if (o.init_pairs < 3) throw ConfigError("init_pairs must be >= 3 for rigid alignment");
  if (!(o.fix_window > 0.0)) throw ConfigError("fix_window must be positive");
  if (!(o.assoc_tolerance > 0.0)) throw ConfigError("assoc_tolerance must be positive");
  if (o.max_window_poses < 0) throw ConfigError("max_window_poses must be >= 0");
  if (o.warmup_solves < 1) throw ConfigError("warmup_solves must be >= 1");
  if (!(o.warmup_translation > 0.0) || !(o.warmup_rotation_deg > 0.0)) {
    throw ConfigError("warm-up thresholds must be positive");
  }
  if (o.odom_weight < 0.0 || o.uwb_weight < 0.0 || o.transform_weight < 0.0 ||
      o.range_weight < 0.0) {
    throw ConfigError("factor weights must be non-negative");
  }
}

namespace {

// Index of the pose nearest to t, or -1 when none lies within tol seconds.
std::ptrdiff_t nearest_time_index(const std::vector<TimedPose>& poses, double t,
                                  double tol) {
  if (poses.empty()) return -1;
  const auto it = std::lower_bound(poses.begin(), poses.end(), t,
                                   [](const TimedPose& p, double v) { return p.t < v; });
  std::ptrdiff_t best = -1;
  double best_dt = tol;
  for (const std::ptrdiff_t idx : {it - poses.begin(), it - poses.begin() - 1}) {
    if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(poses.size())) continue;
    const double dt = std::abs(poses[idx].t - t);
    if (dt <= best_dt) {
      best_dt = dt;
      best = idx;
    }
  }
  return best;
}

}  // namespace

FusionState::FusionState(const PipelineOptions& options) : opt_(options) {
  validate(opt_);
}

void FusionState::add_odometry(const OdometryPose& odom) {
  if (!odometry_.empty() && !(odom.t > odometry_.back().t)) {
    throw DataError("odometry timestamps must be strictly increasing");
  }
  Pose estimate;
  if (odometry_.empty()) {
    estimate = compose(t_um_, odom.pose);
  } else {
    // Dead-reckon the new pose from the latest fused estimate.
    const Pose rel = compose(inverse(odometry_.back().pose), odom.pose);
    estimate = compose(estimates_.back().pose, rel);
  }
  odometry_.push_back(odom);
  estimates_.push_back(TimedPose{odom.t, estimate});
  ++poses_since_solve_;
  maybe_solve(false);
}

void FusionState::add_fix(const UwbFix& fix) {
  fixes_.push_back(fix);
  ++fixes_since_solve_;
  if (!initialized_) try_initialize();
}

long FusionState::correspondences() const {
  long n = 0;
  for (const auto& f : fixes_) {
    if (nearest_pose(f.t) >= 0) ++n;
  }
  return n;
}

std::optional<Vector3> FusionState::position_at(double t) const {
  const auto k = nearest_pose(t);
  if (k < 0) return std::nullopt;
  return estimates_[k].pose.translation;
}

std::ptrdiff_t FusionState::nearest_pose(double t) const {
  return nearest_time_index(estimates_, t, opt_.assoc_tolerance);
}

void FusionState::try_initialize() {
  std::vector<Vector3> odom_pts, fix_pts;
  for (const auto& f : fixes_) {
    const auto k = nearest_pose(f.t);
    if (k < 0) continue;
    odom_pts.push_back(odometry_[k].pose.translation);
    fix_pts.push_back(f.position);
  }
  if (static_cast<long>(odom_pts.size()) < opt_.init_pairs) return;
  try {
    t_um_ = align_umeyama(odom_pts, fix_pts);
  } catch (const DegenerateAlignment&) {
    return;  // not enough spatial spread yet (e.g. still on the first straight)
  }
  initialized_ = true;
  // Re-anchor the dead-reckoned history into the global frame, then refine.
  for (std::size_t k = 0; k < estimates_.size(); ++k) {
    estimates_[k].pose = compose(t_um_, odometry_[k].pose);
  }
  trace_.push_back(TumSample{estimates_.back().t,
                             static_cast<long>(estimates_.size()), t_um_});
  update_stability();
  maybe_solve(true);
}

void FusionState::maybe_solve(bool force) {
  if (estimates_.size() < 2) return;
  if (!force && poses_since_solve_ < opt_.resolve_every) return;
  if (force && poses_since_solve_ == 0 && fixes_since_solve_ == 0) return;
  reports_.push_back(solve_graph());
  poses_since_solve_ = 0;
  fixes_since_solve_ = 0;
  if (initialized_) {
    trace_.push_back(TumSample{estimates_.back().t,
                               static_cast<long>(estimates_.size()), t_um_});
    update_stability();
  }
}

SolverReport FusionState::solve_graph() {
  Problem problem;
  const std::size_t n = estimates_.size();
  std::size_t first_free = 0;
  if (opt_.max_window_poses > 0 && n > static_cast<std::size_t>(opt_.max_window_poses)) {
    first_free = n - static_cast<std::size_t>(opt_.max_window_poses);
  }
  // The pose just before the window stays in the graph, frozen, so the oldest
  // window pose keeps its odometry constraint.
  const std::size_t lo = first_free == 0 ? 0 : first_free - 1;
  std::vector<VariableId> vars(n);
  constexpr std::array<bool, 6> kFrozen{true, true, true, true, true, true};
  for (std::size_t k = lo; k < n; ++k) {
    vars[k] = problem.add_pose(estimates_[k].pose,
                               k < first_free ? kFrozen : std::array<bool, 6>{});
  }
  if (opt_.odom_weight > 0.0) {
    for (std::size_t k = lo + 1; k < n; ++k) {
      add_relative_pose_factor(problem, vars[k], vars[k - 1], odometry_[k].pose,
                               odometry_[k - 1].pose, Loss::identity(),
                               opt_.odom_weight);
    }
  }
  VariableId tum_var;
  if (initialized_) {
    tum_var = problem.add_pose(t_um_);
    for (const auto& f : fixes_) {
      const auto k = nearest_pose(f.t);
      if (k < 0) continue;
      if (static_cast<std::size_t>(k) >= first_free && opt_.uwb_weight > 0.0) {
        add_uwb_position_factor(problem, vars[k], f, opt_.uwb_loss, opt_.uwb_weight);
      }
      if (opt_.transform_weight > 0.0) {
        add_frame_transform_factor(problem, tum_var, f,
                                   odometry_[k].pose.translation,
                                   opt_.transform_loss, opt_.transform_weight);
      }
    }
  }
  SolverReport report = solve(problem, opt_.fusion_solver);
  for (std::size_t k = first_free; k < n; ++k) {
    estimates_[k].pose = problem.pose(vars[k]);
  }
  if (initialized_) t_um_ = problem.pose(tum_var);
  return report;
}

void FusionState::update_stability() {
  if (stable_) return;
  const std::size_t k = static_cast<std::size_t>(opt_.warmup_solves);
  if (trace_.size() < k) return;
  const double rot_tol = opt_.warmup_rotation_deg * std::numbers::pi / 180.0;
  for (std::size_t i = trace_.size() - k + 1; i < trace_.size(); ++i) {
    const PoseDelta d = pose_delta(trace_[i - 1].t_um, trace_[i].t_um);
    if (d.translation_m >= opt_.warmup_translation || d.rotation_rad >= rot_tol) {
      return;
    }
  }
  stable_ = true;
}

void FusionState::finish() {
  if (finished_) return;
  finished_ = true;
  maybe_solve(true);
  dropped_fixes_ = 0;
  for (const auto& f : fixes_) {
    if (nearest_pose(f.t) < 0) ++dropped_fixes_;
  }
}

std::vector<std::string> free_scalar_names(const AnchorMap& gauge) {
  static constexpr char kAxis[3] = {'x', 'y', 'z'};
  std::vector<std::string> names;
  for (const auto& e : gauge) {
    for (int a = 0; a < 3; ++a) {
      if (!e.fixed[a]) names.push_back(e.id + '.' + kAxis[a]);
    }
  }
  return names;
}

CalibrationState::CalibrationState(AnchorMap initial, const PipelineOptions& options)
    : opt_(options), anchors_(std::move(initial)) {
  validate(opt_);
  if (anchors_.empty()) throw ConfigError("calibration needs at least one anchor");
  bool has_origin = false;
  for (const auto& e : anchors_) {
    if (e.fixed[0] && e.fixed[1] && e.fixed[2]) has_origin = true;
  }
  if (!has_origin) {
    throw ConfigError("calibration gauge needs one fully fixed anchor as origin");
  }
  received_.assign(anchors_.size(), 0);
  last_associated_.assign(anchors_.size(), 0);
  gate_ = [] { return true; };
}

bool CalibrationState::add_range(const RangeMeasurement& m) {
  std::size_t idx = anchors_.size();
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (anchors_.at(i).id == m.anchor_id) {
      idx = i;
      break;
    }
  }
  if (idx == anchors_.size()) {
    throw DataError("range references unknown anchor '" + m.anchor_id + "'");
  }
  if (!std::isfinite(m.range) || m.range <= 0.0) {
    throw DataError("non-positive range to anchor '" + m.anchor_id + "'");
  }
  ranges_.push_back(m);
  ++received_[idx];
  ++ranges_since_solve_;
  return maybe_solve(false);
}

void CalibrationState::finish() {
  maybe_solve(true);
}

bool CalibrationState::maybe_solve(bool force) {
  if (ranges_since_solve_ == 0) return false;
  if (!force && ranges_since_solve_ < opt_.recalib_every) return false;
  if (gate_ && !gate_()) return false;
  if (!lookup_) throw PipelineError("calibration position lookup not set");

  // Re-associate everything against the *current* trajectory estimate.
  struct Assoc {
    std::size_t anchor;
    Vector3 position;
    const RangeMeasurement* m;
  };
  std::vector<Assoc> assoc;
  assoc.reserve(ranges_.size());
  std::vector<long> counts(anchors_.size(), 0);
  long unassociated = 0;
  for (const auto& m : ranges_) {
    std::size_t idx = 0;
    while (anchors_.at(idx).id != m.anchor_id) ++idx;  // validated on arrival
    const auto p = lookup_(m.t);
    if (!p) {
      ++unassociated;
      continue;
    }
    assoc.push_back(Assoc{idx, *p, &m});
    ++counts[idx];
  }
  unassociated_ = unassociated;
  if (assoc.empty()) return false;

  Problem problem;
  std::vector<VariableId> vars(anchors_.size());
  bool any_free = false;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    std::array<bool, 3> mask = anchors_.at(i).fixed;
    if (counts[i] == 0) mask = {true, true, true};  // unobserved: hold in place
    for (const bool f : mask) any_free = any_free || !f;
    vars[i] = problem.add_point(anchors_.at(i).position, mask);
  }
  if (!any_free) {
    ranges_since_solve_ = 0;
    return false;
  }
  for (const auto& a : assoc) {
    add_range_factor(problem, vars[a.anchor], a.position, *a.m, opt_.range_loss,
                     opt_.range_weight, &coincidences_);
  }
  reports_.push_back(solve(problem, opt_.calibration_solver));
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    anchors_.at(i).position = problem.point(vars[i]);
  }
  last_associated_ = counts;
  solved_once_ = true;

  AnchorTraceRow row;
  row.n_ranges = static_cast<long>(ranges_.size());
  for (const auto& e : anchors_) {
    for (int a = 0; a < 3; ++a) {
      if (!e.fixed[a]) row.scalars.push_back(e.position(a));
    }
  }
  trace_.push_back(std::move(row));
  ranges_since_solve_ = 0;
  return true;
}

std::vector<std::string> CalibrationState::unobserved() const {
  std::vector<std::string> out;
  const auto& counts = solved_once_ ? last_associated_ : received_;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (counts[i] == 0) out.push_back(anchors_.at(i).id);
  }
  return out;
}

namespace {

LocalizationResult collect(FusionState& fusion) {
  LocalizationResult out;
  out.trajectory = fusion.trajectory();
  out.t_um = fusion.t_um();
  out.t_um_trace = fusion.t_um_trace();
  out.initialization_starved = !fusion.t_um_initialized();
  out.correspondences = fusion.correspondences();
  out.dropped_fixes = fusion.dropped_fixes();
  out.solver_reports = fusion.solver_reports();
  return out;
}

CalibrationResult collect(CalibrationState& calib, const AnchorMap& gauge) {
  CalibrationResult out;
  out.anchors = calib.anchors();
  out.trace = calib.trace();
  out.scalar_names = free_scalar_names(gauge);
  out.unobserved = calib.unobserved();
  out.ranges_consumed = calib.ranges_consumed();
  out.coincidences = calib.coincidences();
  out.unassociated_ranges = calib.unassociated_ranges();
  out.solver_reports = calib.solver_reports();
  return out;
}

}  // namespace

LocalizationResult run_localization(const std::vector<OdometryPose>& odometry,
                                    const std::vector<UwbFix>& fixes,
                                    const PipelineOptions& options) {
  if (odometry.size() < 2) throw DataError("fusion needs at least 2 odometry poses");
  if (!std::is_sorted(fixes.begin(), fixes.end(),
                      [](const UwbFix& a, const UwbFix& b) { return a.t < b.t; })) {
    throw DataError("fix stream must be time-ordered");
  }
  FusionState fusion(options);
  std::size_t io = 0, jf = 0;
  while (io < odometry.size() || jf < fixes.size()) {
    if (io < odometry.size() && (jf == fixes.size() || odometry[io].t <= fixes[jf].t)) {
      fusion.add_odometry(odometry[io++]);
    } else {
      fusion.add_fix(fixes[jf++]);
    }
  }
  fusion.finish();
  return collect(fusion);
}

CalibrationResult run_calibration(const std::vector<TimedPose>& global_poses,
                                  const std::vector<RangeMeasurement>& ranges,
                                  const AnchorMap& gauge,
                                  const PipelineOptions& options) {
  if (!std::is_sorted(global_poses.begin(), global_poses.end(),
                      [](const TimedPose& a, const TimedPose& b) { return a.t < b.t; })) {
    throw DataError("trajectory must be time-ordered");
  }
  CalibrationState calib(gauge, options);
  calib.set_position_lookup(
      [&global_poses, tol = options.assoc_tolerance](double t) -> std::optional<Vector3> {
        const auto k = nearest_time_index(global_poses, t, tol);
        if (k < 0) return std::nullopt;
        return global_poses[k].pose.translation;
      });
  for (const auto& m : ranges) calib.add_range(m);
  calib.finish();
  return collect(calib, gauge);
}

RunResult run_simultaneous(const SimDataset& dataset, const AnchorMap& initial_anchors,
                           const PipelineOptions& options) {
  if (dataset.odometry.size() < 2) {
    throw DataError("dataset needs at least 2 odometry poses");
  }
  if (!std::is_sorted(dataset.ranges.begin(), dataset.ranges.end(),
                      [](const RangeMeasurement& a, const RangeMeasurement& b) {
                        return a.t < b.t;
                      })) {
    throw DataError("range stream must be time-ordered");
  }

  RunResult result;
  result.initial_anchors = initial_anchors;
  FusionState fusion(options);
  CalibrationState calib(initial_anchors, options);
  calib.set_position_lookup([&fusion](double t) { return fusion.position_at(t); });
  calib.set_gate([&fusion] { return fusion.t_um_stable(); });
  UwbFixStream stream(initial_anchors, options.fix_window);

  const auto& odo = dataset.odometry;
  const auto& rng = dataset.ranges;
  std::size_t io = 0, ir = 0;
  const auto handle_fix = [&](const std::optional<UwbFix>& fix) {
    if (!fix) return;
    result.fixes.push_back(*fix);
    fusion.add_fix(*fix);
  };
  try {
    while (io < odo.size() || ir < rng.size()) {
      // Odometry first on ties so a range can see the pose at its own tick.
      if (io < odo.size() && (ir == rng.size() || odo[io].t <= rng[ir].t)) {
        fusion.add_odometry(odo[io++]);
      } else {
        handle_fix(stream.push(rng[ir]));
        const bool solved = calib.add_range(rng[ir]);
        if (solved && options.feedback_anchors) stream.set_anchors(calib.anchors());
        ++ir;
      }
    }
    handle_fix(stream.flush());
    fusion.finish();
    calib.finish();
  } catch (const Error& e) {
    throw PipelineError(std::string(e.what()) + " [after odometry " +
                        std::to_string(io) + "/" + std::to_string(odo.size()) +
                        ", ranges " + std::to_string(ir) + "/" +
                        std::to_string(rng.size()) + "]");
  }

  result.fix_stats = stream.stats();
  result.localization = collect(fusion);
  result.calibration = collect(calib, initial_anchors);
  return result;
}

std::vector<TimedPose> as_trajectory(const std::vector<UwbFix>& fixes) {
  std::vector<TimedPose> out;
  out.reserve(fixes.size());
  for (const auto& f : fixes) {
    out.push_back(TimedPose{f.t, Pose(Rotation3::identity(), f.position)});
  }
  return out;
}

}  // namespace uwbfgo
