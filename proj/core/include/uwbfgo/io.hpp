#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "uwbfgo/errors.hpp"
#include "uwbfgo/factors.hpp"
#include "uwbfgo/metrics.hpp"
#include "uwbfgo/pipeline.hpp"
#include "uwbfgo/simulator.hpp"
#include "uwbfgo/trilateration.hpp"

namespace uwbfgo {

/// Everything one experiment needs: dataset synthesis, the calibration gauge
/// (initial anchors + fixed coordinates), and pipeline/solver settings.
struct RunConfig {
  SimConfig sim;
  AnchorMap gauge;
  PipelineOptions pipeline;
  std::string output_dir = "out";
};

/// Reference room with the rough initial anchor guesses as gauge (first
/// anchor fully pinned, third anchor pinned on the x axis, all heights known).
RunConfig default_run_config();

/// Strict JSON config parsing: unknown keys and type mismatches raise
/// ConfigError naming the offending path (e.g. "sim.noise: unknown key ...").
RunConfig parse_config(const std::string& text,
                       const std::string& source_name = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Canonical serialization; parse(serialize(parse(x))) == parse(x).
std::string serialize_config(const RunConfig& config);

/// FNV-1a of the canonical serialization, recorded in run manifests.
std::uint64_t config_hash(const RunConfig& config);

/// Round-trip-safe float formatting (17 significant digits) used by every
/// emitted file.
std::string format_double(double v);

// ---- file formats ---------------------------------------------------------
// Readers throw DataError with "<file>:<line>" context (missing files
// included); writers throw IoError when the target cannot be written.
// All writers return the number of data rows emitted.

// t,x,y,z,qx,qy,qz,qw (header line included)
long write_trajectory_csv(const std::filesystem::path& path,
                          const std::vector<TimedPose>& poses);
std::vector<TimedPose> read_trajectory_csv(const std::filesystem::path& path);

// t,anchor_id,range_m
long write_ranges_csv(const std::filesystem::path& path,
                      const std::vector<RangeMeasurement>& ranges);
std::vector<RangeMeasurement> read_ranges_csv(const std::filesystem::path& path);

// TUM: "t x y z qx qy qz qw", space separated, '#' comments
long write_trajectory_tum(const std::filesystem::path& path,
                          const std::vector<TimedPose>& poses);
std::vector<TimedPose> read_trajectory_tum(const std::filesystem::path& path);

// anchor_id,x,y,z,fixed_x,fixed_y,fixed_z
long write_anchors_csv(const std::filesystem::path& path, const AnchorMap& anchors);
AnchorMap read_anchors_csv(const std::filesystem::path& path);

// whitespace-separated square matrix, row order = anchor order
Eigen::MatrixXd read_range_matrix(const std::filesystem::path& path);
long write_range_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);

// n_ranges,<one column per free scalar>
long write_anchor_trace_csv(const std::filesystem::path& path,
                            const std::vector<std::string>& scalar_names,
                            const std::vector<AnchorTraceRow>& trace);

// t,n_poses,x,y,z,qx,qy,qz,qw
long write_tum_trace_csv(const std::filesystem::path& path,
                         const std::vector<TumSample>& trace);

// t,error_m per associated pair
long write_trajectory_errors_csv(const std::filesystem::path& path,
                                 const TrajectoryErrorReport& report);

/// Dataset directory: odometry.csv, ranges.csv, ground_truth.csv.
void write_dataset(const std::filesystem::path& dir, const SimDataset& dataset);

/// Reads the three dataset files; ground_truth.csv may be absent (leaves the
/// ground-truth stream empty). Frame metadata (truth anchors, T_um) is not
/// stored in the dataset and must come from the config.
SimDataset read_dataset(const std::filesystem::path& dir);

// ---- reports --------------------------------------------------------------

std::string to_text(const TrajectoryErrorReport& report, const std::string& label);
std::string to_text(const AnchorErrorReport& report, const std::string& label);
std::string to_text(const SolverReport& report, const std::string& label);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Deterministic run manifest (command, seed, config hash, file row counts).
void write_manifest(const std::filesystem::path& path, const std::string& command,
                    const RunConfig& config,
                    const std::vector<std::pair<std::string, long>>& files);

}  // namespace uwbfgo
