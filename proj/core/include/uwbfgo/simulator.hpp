#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "uwbfgo/errors.hpp"
#include "uwbfgo/factors.hpp"
#include "uwbfgo/geometry.hpp"
#include "uwbfgo/trilateration.hpp"

namespace uwbfgo {

// Piecewise-linear tour of the waypoints at constant speed, corners replaced
// by tangent circular arcs so heading stays continuous. A closed polygon
// (front == back) loops; an open one parks the robot at the end.
struct WaypointTrajectory {
  std::vector<Vector3> waypoints;
  double speed = 0.5;          // m/s
  double corner_radius = 0.3;  // m, shrunk automatically on short segments
};

struct LissajousTrajectory {
  Vector3 amplitude = Vector3(1.5, 1.0, 0.0);  // m per axis
  Vector3 frequency = Vector3(0.05, 0.10, 0.0);  // Hz per axis
  Vector3 phase = Vector3(0.0, 1.5707963267948966, 0.0);  // rad per axis
  Vector3 center = Vector3::Zero();
};

using TrajectoryConfig = std::variant<WaypointTrajectory, LissajousTrajectory>;

struct NoiseConfig {
  double sigma_range = 0.05;      // m, white noise per range
  double odom_rot_noise = 0.001;  // rad per step
  double odom_trans_noise = 0.002;  // m per step
  double odom_drift_rate = 0.01;  // systematic bias, fraction per meter traveled
};

struct NlosConfig {
  double probability = 0.0;  // per range measurement
  double bias_min = 0.5;     // m, positive late-multipath bias
  double bias_max = 2.0;
};

struct Dropout {
  enum class Sensor { Uwb, Odom };
  Sensor sensor = Sensor::Uwb;
  double start = 0.0;  // s, inclusive
  double end = 0.0;    // s, inclusive
};

struct SimConfig {
  std::uint64_t seed = 0;
  double duration = 30.0;   // s
  double odom_rate = 10.0;  // Hz
  double range_rate = 10.0;  // Hz, all anchors tick together
  AnchorMap anchors_truth;
  TrajectoryConfig trajectory = WaypointTrajectory{};
  NoiseConfig noise;
  NlosConfig nlos;
  std::vector<Dropout> dropouts;
  Pose map_frame_offset;  // ground-truth T_um (odometry frame in the global frame)
};

struct SimStats {
  long resampled_ranges = 0;  // negative draws re-rolled
  long skipped_ranges = 0;    // gave up after repeated negative draws
  long nlos_ranges = 0;
};

struct SimDataset {
  std::vector<TimedPose> ground_truth;  // global frame, covers all sample times
  std::vector<OdometryPose> odometry;   // map frame
  std::vector<RangeMeasurement> ranges;
  Pose truth_T_um;
  AnchorMap truth_anchors;
  SimStats stats;
};

// Reproducible Gaussian/uniform source: explicit 53-bit uniforms and
// Box-Muller on top of mt19937_64, so streams are bit-identical across
// standard libraries (std::normal_distribution is not).
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : rng_(seed) {}

  double uniform();  // [0, 1)
  double gaussian();
  Vector3 gaussian3();

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over the master seed and a channel label; every sensor channel gets
// an independent, order-insensitive stream.
std::uint64_t channel_seed(std::uint64_t master_seed, const std::string& channel);

void validate(const SimConfig& config);

// Deterministic synthesis of ground truth, drifting odometry, and UWB ranges.
SimDataset generate(const SimConfig& config);

// Removes samples inside the dropout intervals; everything else bit-identical.
SimDataset degrade(const SimDataset& dataset, const std::vector<Dropout>& dropouts);

// Canonical desk-scale setup: 4.2 m x 3.0 m room, four anchors on tripods of
// different heights, rounded-rectangle sweep, non-trivial map frame offset.
SimConfig reference_sim_config();

}  // namespace uwbfgo
