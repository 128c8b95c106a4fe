#pragma once

#include <array>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "uwbfgo/errors.hpp"
#include "uwbfgo/factors.hpp"
#include "uwbfgo/geometry.hpp"

namespace uwbfgo {

struct AnchorEntry {
  std::string id;
  Vector3 position = Vector3::Zero();
  // Per-coordinate gauge mask: fixed coordinates keep their configured value.
  std::array<bool, 3> fixed{false, false, false};
};

// Ordered anchor collection with unique ids. Order matters: it defines the
// row/column order of inter-anchor range matrices and the gauge roles during
// self-calibration.
class AnchorMap {
 public:
  AnchorMap() = default;

  void add(std::string id, const Vector3& position,
           const std::array<bool, 3>& fixed = {false, false, false});

  const AnchorEntry* find(const std::string& id) const;
  const AnchorEntry& at(std::size_t i) const { return entries_.at(i); }
  AnchorEntry& at(std::size_t i) { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::vector<AnchorEntry>::const_iterator begin() const { return entries_.begin(); }
  std::vector<AnchorEntry>::const_iterator end() const { return entries_.end(); }

  Vector3 centroid() const;

 private:
  std::vector<AnchorEntry> entries_;
};

struct TrilaterationResult {
  Vector3 position = Vector3::Zero();
  double rms = 0.0;  // sqrt(mean((‖X_i − p‖ − r_i)²)) at the solution
  int iterations = 0;
};

// Gauss-Newton fix from simultaneous ranges. Axes flagged in `fixed_axes`
// stay at their initial-guess value (used when all anchors share a plane).
// Throws InsufficientRanges with <3 distinct usable anchors, NoConvergence
// if the cost increases five consecutive steps.
TrilaterationResult trilaterate_tag(
    const std::vector<std::pair<std::string, double>>& ranges,
    const AnchorMap& anchors, const Vector3& initial_guess,
    const std::array<bool, 3>& fixed_axes = {false, false, false});

struct SelfCalibrationResult {
  AnchorMap anchors;
  std::vector<std::string> warnings;  // e.g. clipped height projections
  double rms_range_error = 0.0;       // fit of placed anchors to input ranges
};

// Planar sequential trilateration of the anchor network from its mutual
// ranges. `gauge` fixes the origin anchor (x=y=0) and pins one planar
// coordinate of one other anchor to zero, which orients the axes; z comes
// from known_heights (ranges are projected into the plane first). The first
// anchor without a planar gauge lands on the positive half-plane; remaining
// anchors are disambiguated by range consistency with it.
SelfCalibrationResult self_calibrate_anchors(
    const Eigen::MatrixXd& inter_anchor_ranges, const AnchorMap& gauge,
    const std::vector<double>& known_heights);

// Averaged variant: one self-calibration per range matrix, positions averaged
// coordinate-wise (fixed coordinates are re-pinned exactly).
SelfCalibrationResult self_calibrate_anchors(
    const std::vector<Eigen::MatrixXd>& range_matrices, const AnchorMap& gauge,
    const std::vector<double>& known_heights);

struct UwbFixStreamStats {
  long epochs_total = 0;
  long fixes_emitted = 0;
  long epochs_below_min_anchors = 0;
  long epochs_solve_failed = 0;
  long epochs_rejected = 0;  // vertical-jump plausibility gate
};

// Groups ranges into fixed-width time epochs and emits one trilaterated fix
// per epoch that sees >=3 distinct anchors. Carries the previous fix as the
// next initial guess; not meant to be shared between consumers.
//
// The vertical axis is the weak direction of indoor range geometry: the
// anchors span far less height than the room spans width, so per-epoch z is
// barely observable, and small anchor-position errors open a spurious
// least-squares minimum mirrored across the anchor canopy that routinely
// fits *better* than the true point and deforms continuously into view as
// the tag moves. The stream therefore treats the tag height as a constant
// to be settled once, not re-estimated per epoch (a ground-robot
// assumption):
//  - The very first fix probes seeds above and below the anchors and, among
//    basins of comparable residual, commits to the lowest (the tag rides a
//    ground robot; anchors are mounted above it).
//  - During the settling window solutions stay fully 3D; ones whose z jumps
//    more than kMaxZDeviation off the running median are dropped as
//    epochs_rejected (an epoch gap, which downstream consumers tolerate).
//  - After kZWindow accepted fixes the median height is frozen and further
//    epochs are solved planar with z pinned there, which removes the mirror
//    basin outright and adds a redundant range to the xy solution. A height
//    settled slightly off truth costs only a rigid vertical offset, which
//    the frame transform absorbs.
class UwbFixStream {
 public:
  static constexpr double kMaxZDeviation = 0.75;  // m
  static constexpr std::size_t kZWindow = 20;     // fixes settling the baseline
  static constexpr double kBasinRmsSlack = 0.15;  // basins this close in rms tie

  explicit UwbFixStream(AnchorMap anchors, double window = 0.1);

  // Feed one measurement (nondecreasing timestamps expected). Returns a fix
  // when feeding `m` closes the previous epoch and that epoch is solvable.
  std::optional<UwbFix> push(const RangeMeasurement& m);

  // Close the trailing epoch at end of stream.
  std::optional<UwbFix> flush();

  // Swap in refreshed anchor positions (e.g. after a calibration update);
  // the previous-fix seed and the open epoch are kept.
  void set_anchors(AnchorMap anchors) { anchors_ = std::move(anchors); }

  const UwbFixStreamStats& stats() const { return stats_; }

 private:
  std::optional<UwbFix> close_epoch();
  std::optional<double> median_z() const;
  TrilaterationResult first_fix(
      const std::vector<std::pair<std::string, double>>& ranges,
      const Vector3& guess) const;

  AnchorMap anchors_;
  double window_;
  long epoch_index_ = -1;
  std::vector<RangeMeasurement> bucket_;
  std::optional<Vector3> last_fix_;
  std::deque<double> accepted_z_;   // settling window, unused once frozen
  std::optional<double> z_baseline_;
  UwbFixStreamStats stats_;
};

// Batch convenience wrapper around UwbFixStream.
std::vector<UwbFix> uwb_fix_stream(const std::vector<RangeMeasurement>& ranges,
                                   const AnchorMap& anchors,
                                   double window = 0.1,
                                   UwbFixStreamStats* stats = nullptr);

}  // namespace uwbfgo
