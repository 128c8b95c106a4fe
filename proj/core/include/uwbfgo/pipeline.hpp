#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uwbfgo/errors.hpp"
#include "uwbfgo/factors.hpp"
#include "uwbfgo/geometry.hpp"
#include "uwbfgo/simulator.hpp"
#include "uwbfgo/solver.hpp"
#include "uwbfgo/trilateration.hpp"

namespace uwbfgo {

struct PipelineOptions {
  int resolve_every = 10;    // fusion re-solve cadence, in new poses
  int recalib_every = 100;   // calibration re-solve cadence, in consumed ranges
  int init_pairs = 20;       // correspondences before the closed-form T_um init
  double fix_window = 0.1;   // s, range-epoch width for trilateration
  double assoc_tolerance = 0.1;  // s, nearest-timestamp association

  // Full-batch window; 0 keeps every pose free, otherwise older poses are
  // frozen in place (still constrain the boundary, no longer updated).
  int max_window_poses = 0;

  // Calibration warm-up: solves start once the last `warmup_solves` T_um
  // estimates agree pairwise within these bounds.
  double warmup_translation = 0.05;  // m
  double warmup_rotation_deg = 1.0;
  int warmup_solves = 3;

  // Swap freshly calibrated anchors into the fix stream mid-run.
  bool feedback_anchors = false;

  Loss uwb_loss = Loss::huber(0.1);
  Loss transform_loss = Loss::huber(0.1);
  // Between the ranging noise floor (~0.1 m residual at convergence) and the
  // NLOS bias scale (0.5 m and up), so multipath outliers saturate early.
  Loss range_loss = Loss::huber(0.25);
  double odom_weight = 1.0;
  double uwb_weight = 1.0;
  double transform_weight = 1.0;
  double range_weight = 1.0;

  SolverOptions fusion_solver;
  SolverOptions calibration_solver;
};

void validate(const PipelineOptions& options);

/// T_um estimate emitted after one fusion solve.
struct TumSample {
  double t = 0.0;     // timestamp of the newest pose at the solve
  long n_poses = 0;   // poses in the graph at the solve
  Pose t_um;
};

/// Localization/fusion graph: odometry relative-pose factors tie consecutive
/// global poses, UWB fixes pull poses into the global frame, and transform
/// factors estimate T_um alongside. Until enough fix/odometry correspondences
/// exist for the closed-form T_um init, the trajectory is pure dead reckoning.
class FusionState {
 public:
  explicit FusionState(const PipelineOptions& options);

  void add_odometry(const OdometryPose& odom);  // may trigger a cadence solve
  void add_fix(const UwbFix& fix);
  void finish();  // solve once more over everything pending

  const std::vector<TimedPose>& trajectory() const { return estimates_; }
  const Pose& t_um() const { return t_um_; }
  const std::vector<TumSample>& t_um_trace() const { return trace_; }
  bool t_um_initialized() const { return initialized_; }
  bool t_um_stable() const { return stable_; }  // warm-up latch
  long correspondences() const;
  long dropped_fixes() const { return dropped_fixes_; }
  const std::vector<SolverReport>& solver_reports() const { return reports_; }

  /// Current fused position nearest to t (within the association tolerance).
  std::optional<Vector3> position_at(double t) const;

 private:
  void try_initialize();
  void maybe_solve(bool force);
  SolverReport solve_graph();
  void update_stability();
  std::ptrdiff_t nearest_pose(double t) const;

  PipelineOptions opt_;
  std::vector<OdometryPose> odometry_;
  std::vector<TimedPose> estimates_;  // parallel to odometry_, global frame
  std::vector<UwbFix> fixes_;
  Pose t_um_;
  bool initialized_ = false;
  bool stable_ = false;
  int poses_since_solve_ = 0;
  int fixes_since_solve_ = 0;
  bool finished_ = false;
  long dropped_fixes_ = 0;
  std::vector<TumSample> trace_;
  std::vector<SolverReport> reports_;
};

/// One calibration solve: total ranges consumed so far plus the free scalars
/// in gauge order (the convergence-plot data).
struct AnchorTraceRow {
  long n_ranges = 0;
  std::vector<double> scalars;
};

/// Column names for AnchorTraceRow::scalars: "<anchor_id>.<axis>" per free
/// coordinate of the gauge.
std::vector<std::string> free_scalar_names(const AnchorMap& gauge);

/// Anchor-calibration graph: range factors between (current) robot global
/// positions and the anchor points, solved in full batch at a fixed cadence.
/// Positions are re-read through the lookup at every solve, so refinements of
/// the trajectory propagate into the calibration.
class CalibrationState {
 public:
  CalibrationState(AnchorMap initial, const PipelineOptions& options);

  using PositionLookup = std::function<std::optional<Vector3>(double)>;
  void set_position_lookup(PositionLookup lookup) { lookup_ = std::move(lookup); }
  /// Warm-up gate; solves are deferred while it returns false.
  void set_gate(std::function<bool()> gate) { gate_ = std::move(gate); }

  /// Returns true when this range triggered a solve.
  bool add_range(const RangeMeasurement& m);
  void finish();

  const AnchorMap& anchors() const { return anchors_; }
  const std::vector<AnchorTraceRow>& trace() const { return trace_; }
  std::vector<std::string> unobserved() const;
  const std::vector<SolverReport>& solver_reports() const { return reports_; }
  long ranges_consumed() const { return static_cast<long>(ranges_.size()); }
  long coincidences() const { return coincidences_; }
  long unassociated_ranges() const { return unassociated_; }

 private:
  bool maybe_solve(bool force);

  PipelineOptions opt_;
  AnchorMap anchors_;
  std::vector<RangeMeasurement> ranges_;
  std::vector<long> received_;         // per anchor, by arrival
  std::vector<long> last_associated_;  // per anchor, at the latest solve
  bool solved_once_ = false;
  long ranges_since_solve_ = 0;
  long coincidences_ = 0;
  long unassociated_ = 0;
  PositionLookup lookup_;
  std::function<bool()> gate_;
  std::vector<AnchorTraceRow> trace_;
  std::vector<SolverReport> reports_;
};

struct LocalizationResult {
  std::vector<TimedPose> trajectory;  // global frame, one pose per odometry pose
  Pose t_um;
  std::vector<TumSample> t_um_trace;
  // True when the T_um init never happened (too few or degenerate
  // correspondences); the trajectory is then dead reckoning under identity.
  bool initialization_starved = false;
  long correspondences = 0;
  long dropped_fixes = 0;
  std::vector<SolverReport> solver_reports;
};

struct CalibrationResult {
  AnchorMap anchors;
  std::vector<AnchorTraceRow> trace;
  std::vector<std::string> scalar_names;
  std::vector<std::string> unobserved;
  long ranges_consumed = 0;
  long coincidences = 0;
  long unassociated_ranges = 0;
  std::vector<SolverReport> solver_reports;
};

struct RunResult {
  LocalizationResult localization;
  CalibrationResult calibration;
  std::vector<UwbFix> fixes;  // raw trilateration track (UWB-only baseline)
  UwbFixStreamStats fix_stats;
  AnchorMap initial_anchors;
};

/// Fusion graph alone over prepared streams (both time-ordered). Needs at
/// least two odometry poses.
LocalizationResult run_localization(const std::vector<OdometryPose>& odometry,
                                    const std::vector<UwbFix>& fixes,
                                    const PipelineOptions& options = {});

/// Calibration graph alone against an externally supplied trajectory.
CalibrationResult run_calibration(const std::vector<TimedPose>& global_poses,
                                  const std::vector<RangeMeasurement>& ranges,
                                  const AnchorMap& gauge,
                                  const PipelineOptions& options = {});

/// Both graphs interleaved over a dataset, timestamp order, fixes produced by
/// trilateration against `initial_anchors` (also the calibration gauge and
/// start values). Deterministic given (dataset, options).
RunResult run_simultaneous(const SimDataset& dataset, const AnchorMap& initial_anchors,
                           const PipelineOptions& options = {});

/// Fix track viewed as a trajectory (identity rotations), for error metrics.
std::vector<TimedPose> as_trajectory(const std::vector<UwbFix>& fixes);

}  // namespace uwbfgo
