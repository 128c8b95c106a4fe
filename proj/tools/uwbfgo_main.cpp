// Command-line front end: simulate datasets, run the two-graph pipeline (or
// each graph alone), and score results against references.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uwbfgo/io.hpp"
#include "uwbfgo/metrics.hpp"
#include "uwbfgo/pipeline.hpp"
#include "uwbfgo/simulator.hpp"
#include "uwbfgo/trilateration.hpp"

namespace fs = std::filesystem;
using namespace uwbfgo;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  bool out_set = false;
};

RunConfig resolve_config(const GlobalArgs& g) {
  RunConfig config =
      g.config_path.empty() ? default_run_config() : load_config(g.config_path);
  if (g.seed_set) config.sim.seed = g.seed;
  if (g.out_set) config.output_dir = g.out_dir;
  return config;
}

fs::path ensure_out_dir(const RunConfig& config) {
  const fs::path dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
  return dir;
}

void note(const fs::path& path, long rows) {
  std::cout << "wrote " << path.string() << " (" << rows << " rows)\n";
}

std::vector<TimedPose> read_trajectory_any(const fs::path& path) {
  if (path.extension() == ".csv") return read_trajectory_csv(path);
  return read_trajectory_tum(path);
}

long write_fixes_csv(const fs::path& path, const std::vector<UwbFix>& fixes) {
  std::ostringstream out;
  out << "t,x,y,z\n";
  for (const auto& f : fixes) {
    out << format_double(f.t) << ',' << format_double(f.position.x()) << ','
        << format_double(f.position.y()) << ',' << format_double(f.position.z())
        << '\n';
  }
  write_text(path, out.str());
  return static_cast<long>(fixes.size());
}

std::string fix_stats_text(const UwbFixStreamStats& s) {
  std::ostringstream out;
  out << "fix_epochs_total = " << s.epochs_total << '\n';
  out << "fixes_emitted = " << s.fixes_emitted << '\n';
  out << "fix_epochs_below_min_anchors = " << s.epochs_below_min_anchors << '\n';
  out << "fix_epochs_solve_failed = " << s.epochs_solve_failed << '\n';
  out << "fix_epochs_rejected = " << s.epochs_rejected << '\n';
  return out.str();
}

std::string localization_summary(const LocalizationResult& r) {
  std::ostringstream out;
  out << "poses = " << r.trajectory.size() << '\n';
  out << "correspondences = " << r.correspondences << '\n';
  out << "dropped_fixes = " << r.dropped_fixes << '\n';
  out << "initialization_starved = " << (r.initialization_starved ? "true" : "false")
      << '\n';
  out << "fusion_solves = " << r.solver_reports.size() << '\n';
  return out.str();
}

std::string calibration_summary(const CalibrationResult& r) {
  std::ostringstream out;
  out << "calibration_ranges_consumed = " << r.ranges_consumed << '\n';
  out << "calibration_coincidences = " << r.coincidences << '\n';
  out << "calibration_unassociated_ranges = " << r.unassociated_ranges << '\n';
  out << "calibration_solves = " << r.solver_reports.size() << '\n';
  out << "unobserved_anchors =";
  if (r.unobserved.empty()) {
    out << " none";
  } else {
    for (const auto& id : r.unobserved) out << ' ' << id;
  }
  out << '\n';
  return out.str();
}

// Trajectory metrics versus ground truth; never throws, reports misses.
std::string trajectory_metrics_text(const std::vector<TimedPose>& estimate,
                                    const std::vector<TimedPose>& reference,
                                    const std::string& label, double tolerance,
                                    const TrajectoryErrorReport** out_report,
                                    TrajectoryErrorReport* storage) {
  try {
    *storage = trajectory_error(estimate, reference, /*pre_align=*/true, tolerance);
    if (out_report != nullptr) *out_report = storage;
    return to_text(*storage, label);
  } catch (const Error& e) {
    return "[trajectory." + label + "]\nunavailable = " + e.what() + "\n";
  }
}

std::string anchor_metrics_text(const AnchorMap& estimate, const AnchorMap& reference,
                                const std::string& label) {
  try {
    return to_text(anchor_error(estimate, reference), label);
  } catch (const Error& e) {
    return "[anchors." + label + "]\nunavailable = " + e.what() + "\n";
  }
}

// ---- subcommands -----------------------------------------------------------

int cmd_simulate(const GlobalArgs& g) {
  const RunConfig config = resolve_config(g);
  const fs::path out = ensure_out_dir(config);
  const SimDataset dataset = generate(config.sim);

  const long n_odo = write_trajectory_csv(out / "odometry.csv", dataset.odometry);
  const long n_rng = write_ranges_csv(out / "ranges.csv", dataset.ranges);
  const long n_gt = write_trajectory_csv(out / "ground_truth.csv", dataset.ground_truth);
  const long n_anc = write_anchors_csv(out / "truth_anchors.csv", dataset.truth_anchors);
  write_text(out / "config.json", serialize_config(config));
  write_manifest(out / "manifest.json", "simulate", config,
                 {{"odometry.csv", n_odo},
                  {"ranges.csv", n_rng},
                  {"ground_truth.csv", n_gt},
                  {"truth_anchors.csv", n_anc}});
  note(out / "odometry.csv", n_odo);
  note(out / "ranges.csv", n_rng);
  note(out / "ground_truth.csv", n_gt);
  note(out / "truth_anchors.csv", n_anc);
  std::cout << "resampled_ranges = " << dataset.stats.resampled_ranges
            << "\nskipped_ranges = " << dataset.stats.skipped_ranges
            << "\nnlos_ranges = " << dataset.stats.nlos_ranges << '\n';
  return 0;
}

int cmd_run(const GlobalArgs& g, const std::string& dataset_dir) {
  const RunConfig config = resolve_config(g);
  if (config.gauge.empty()) {
    throw ConfigError("run: config has no gauge anchors (gauge.anchors)");
  }
  const SimDataset dataset =
      dataset_dir.empty() ? generate(config.sim) : read_dataset(dataset_dir);
  const RunResult result = run_simultaneous(dataset, config.gauge, config.pipeline);
  const fs::path out = ensure_out_dir(config);

  const long n_traj =
      write_trajectory_tum(out / "estimated_trajectory.tum", result.localization.trajectory);
  const long n_trace = write_anchor_trace_csv(
      out / "anchor_trace.csv", result.calibration.scalar_names, result.calibration.trace);
  const long n_tum = write_tum_trace_csv(out / "t_um_trace.csv",
                                         result.localization.t_um_trace);
  const long n_anc =
      write_anchors_csv(out / "anchors_estimated.csv", result.calibration.anchors);
  const long n_fix = write_fixes_csv(out / "uwb_fixes.csv", result.fixes);

  std::ostringstream metrics;
  long n_err = 0;
  if (!dataset.ground_truth.empty()) {
    TrajectoryErrorReport fused_storage;
    const TrajectoryErrorReport* fused = nullptr;
    metrics << trajectory_metrics_text(result.localization.trajectory,
                                       dataset.ground_truth, "fused",
                                       config.pipeline.assoc_tolerance, &fused,
                                       &fused_storage);
    TrajectoryErrorReport uwb_storage;
    metrics << trajectory_metrics_text(as_trajectory(result.fixes), dataset.ground_truth,
                                       "uwb_only", config.pipeline.assoc_tolerance,
                                       nullptr, &uwb_storage);
    if (fused != nullptr) {
      n_err = write_trajectory_errors_csv(out / "trajectory_errors.csv", *fused);
    }
  } else {
    metrics << "[trajectory]\nunavailable = no ground truth in dataset\n";
  }
  if (!config.sim.anchors_truth.empty()) {
    metrics << anchor_metrics_text(result.calibration.anchors, config.sim.anchors_truth,
                                   "final");
  }

  std::ostringstream solver;
  solver << "[run]\n";
  solver << localization_summary(result.localization);
  solver << calibration_summary(result.calibration);
  solver << fix_stats_text(result.fix_stats);
  if (!result.localization.solver_reports.empty()) {
    solver << to_text(result.localization.solver_reports.back(), "fusion.final");
  }
  if (!result.calibration.solver_reports.empty()) {
    solver << to_text(result.calibration.solver_reports.back(), "calibration.final");
  }

  write_text(out / "metrics_report.txt", metrics.str());
  write_text(out / "solver_reports.txt", solver.str());
  write_manifest(out / "manifest.json", "run", config,
                 {{"estimated_trajectory.tum", n_traj},
                  {"anchor_trace.csv", n_trace},
                  {"t_um_trace.csv", n_tum},
                  {"anchors_estimated.csv", n_anc},
                  {"uwb_fixes.csv", n_fix},
                  {"trajectory_errors.csv", n_err}});

  note(out / "estimated_trajectory.tum", n_traj);
  note(out / "anchor_trace.csv", n_trace);
  note(out / "t_um_trace.csv", n_tum);
  note(out / "anchors_estimated.csv", n_anc);
  note(out / "uwb_fixes.csv", n_fix);
  std::cout << metrics.str();
  if (result.localization.initialization_starved) {
    std::cerr << "warning: frame transform never initialized; trajectory is dead "
                 "reckoning\n";
  }
  return 0;
}

int cmd_localize(const GlobalArgs& g, const std::string& dataset_dir,
                 const std::string& anchors_file) {
  const RunConfig config = resolve_config(g);
  const SimDataset dataset =
      dataset_dir.empty() ? generate(config.sim) : read_dataset(dataset_dir);
  AnchorMap anchors;
  if (!anchors_file.empty()) {
    anchors = read_anchors_csv(anchors_file);
  } else if (!config.gauge.empty()) {
    anchors = config.gauge;
  } else {
    throw ConfigError("localize: no anchors (give --anchors or gauge.anchors)");
  }

  UwbFixStreamStats stats;
  const std::vector<UwbFix> fixes =
      uwb_fix_stream(dataset.ranges, anchors, config.pipeline.fix_window, &stats);
  const LocalizationResult result =
      run_localization(dataset.odometry, fixes, config.pipeline);
  const fs::path out = ensure_out_dir(config);

  const long n_traj =
      write_trajectory_tum(out / "estimated_trajectory.tum", result.trajectory);
  const long n_tum = write_tum_trace_csv(out / "t_um_trace.csv", result.t_um_trace);
  const long n_fix = write_fixes_csv(out / "uwb_fixes.csv", fixes);

  std::ostringstream metrics;
  long n_err = 0;
  if (!dataset.ground_truth.empty()) {
    TrajectoryErrorReport fused_storage;
    const TrajectoryErrorReport* fused = nullptr;
    metrics << trajectory_metrics_text(result.trajectory, dataset.ground_truth, "fused",
                                       config.pipeline.assoc_tolerance, &fused,
                                       &fused_storage);
    if (fused != nullptr) {
      n_err = write_trajectory_errors_csv(out / "trajectory_errors.csv", *fused);
    }
  } else {
    metrics << "[trajectory]\nunavailable = no ground truth in dataset\n";
  }

  std::ostringstream solver;
  solver << "[localize]\n";
  solver << localization_summary(result);
  solver << fix_stats_text(stats);
  if (!result.solver_reports.empty()) {
    solver << to_text(result.solver_reports.back(), "fusion.final");
  }

  write_text(out / "metrics_report.txt", metrics.str());
  write_text(out / "solver_reports.txt", solver.str());
  write_manifest(out / "manifest.json", "localize", config,
                 {{"estimated_trajectory.tum", n_traj},
                  {"t_um_trace.csv", n_tum},
                  {"uwb_fixes.csv", n_fix},
                  {"trajectory_errors.csv", n_err}});

  note(out / "estimated_trajectory.tum", n_traj);
  note(out / "t_um_trace.csv", n_tum);
  note(out / "uwb_fixes.csv", n_fix);
  std::cout << metrics.str();
  if (result.initialization_starved) {
    std::cerr << "warning: frame transform never initialized; trajectory is dead "
                 "reckoning\n";
  }
  return 0;
}

int cmd_calibrate(const GlobalArgs& g, const std::string& trajectory_file,
                  const std::string& ranges_file,
                  const std::vector<std::string>& matrix_files) {
  const RunConfig config = resolve_config(g);
  if (config.gauge.empty()) {
    throw ConfigError("calibrate: config has no gauge anchors (gauge.anchors)");
  }
  const fs::path out = ensure_out_dir(config);

  if (!matrix_files.empty()) {
    // Anchor-only mode: place the network from its inter-anchor ranges.
    std::vector<Eigen::MatrixXd> matrices;
    for (const auto& f : matrix_files) matrices.push_back(read_range_matrix(f));
    std::vector<double> heights;
    for (const auto& a : config.gauge) heights.push_back(a.position.z());
    const SelfCalibrationResult result =
        self_calibrate_anchors(matrices, config.gauge, heights);
    const long n_anc = write_anchors_csv(out / "anchors_estimated.csv", result.anchors);
    std::ostringstream report;
    report << "[self_calibration]\n";
    report << "matrices = " << matrices.size() << '\n';
    report << "rms_range_error_m = " << format_double(result.rms_range_error) << '\n';
    for (const auto& w : result.warnings) report << "warning = " << w << '\n';
    if (!config.sim.anchors_truth.empty()) {
      report << anchor_metrics_text(result.anchors, config.sim.anchors_truth, "final");
    }
    write_text(out / "metrics_report.txt", report.str());
    write_manifest(out / "manifest.json", "calibrate", config,
                   {{"anchors_estimated.csv", n_anc}});
    note(out / "anchors_estimated.csv", n_anc);
    std::cout << report.str();
    return 0;
  }

  if (trajectory_file.empty() || ranges_file.empty()) {
    throw ConfigError(
        "calibrate: give --trajectory and --ranges (graph mode) or --matrix");
  }
  const std::vector<TimedPose> trajectory = read_trajectory_any(trajectory_file);
  const std::vector<RangeMeasurement> ranges = read_ranges_csv(ranges_file);
  const CalibrationResult result =
      run_calibration(trajectory, ranges, config.gauge, config.pipeline);

  const long n_anc = write_anchors_csv(out / "anchors_estimated.csv", result.anchors);
  const long n_trace =
      write_anchor_trace_csv(out / "anchor_trace.csv", result.scalar_names, result.trace);

  std::ostringstream metrics;
  if (!config.sim.anchors_truth.empty()) {
    metrics << anchor_metrics_text(result.anchors, config.sim.anchors_truth, "final");
  }
  std::ostringstream solver;
  solver << "[calibrate]\n";
  solver << calibration_summary(result);
  if (!result.solver_reports.empty()) {
    solver << to_text(result.solver_reports.back(), "calibration.final");
  }
  write_text(out / "metrics_report.txt", metrics.str());
  write_text(out / "solver_reports.txt", solver.str());
  write_manifest(out / "manifest.json", "calibrate", config,
                 {{"anchors_estimated.csv", n_anc}, {"anchor_trace.csv", n_trace}});
  note(out / "anchors_estimated.csv", n_anc);
  note(out / "anchor_trace.csv", n_trace);
  std::cout << metrics.str();
  return 0;
}

int cmd_evaluate(const GlobalArgs& g, const std::string& estimate_file,
                 const std::string& reference_file, const std::string& est_anchors_file,
                 const std::string& ref_anchors_file, double tolerance) {
  RunConfig config;  // evaluate needs no experiment config, only --out
  if (!g.config_path.empty()) config = load_config(g.config_path);
  if (g.out_set) config.output_dir = g.out_dir;
  const fs::path out = ensure_out_dir(config);

  std::ostringstream metrics;
  long n_err = 0;
  bool any = false;
  if (!estimate_file.empty() || !reference_file.empty()) {
    if (estimate_file.empty() || reference_file.empty()) {
      throw ConfigError("evaluate: --estimate and --reference go together");
    }
    const auto estimate = read_trajectory_any(estimate_file);
    const auto reference = read_trajectory_any(reference_file);
    const TrajectoryErrorReport report =
        trajectory_error(estimate, reference, /*pre_align=*/true, tolerance);
    metrics << to_text(report, "evaluate");
    n_err = write_trajectory_errors_csv(out / "trajectory_errors.csv", report);
    any = true;
  }
  if (!est_anchors_file.empty() || !ref_anchors_file.empty()) {
    if (est_anchors_file.empty() || ref_anchors_file.empty()) {
      throw ConfigError("evaluate: --est-anchors and --ref-anchors go together");
    }
    const AnchorMap estimate = read_anchors_csv(est_anchors_file);
    const AnchorMap reference = read_anchors_csv(ref_anchors_file);
    metrics << to_text(anchor_error(estimate, reference), "evaluate");
    any = true;
  }
  if (!any) {
    throw ConfigError(
        "evaluate: nothing to do (give --estimate/--reference or --est-anchors/"
        "--ref-anchors)");
  }
  write_text(out / "metrics_report.txt", metrics.str());
  if (n_err > 0) note(out / "trajectory_errors.csv", n_err);
  note(out / "metrics_report.txt", 0);
  std::cout << metrics.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UWB anchor calibration and trajectory fusion toolkit"};
  app.require_subcommand(1);

  GlobalArgs global;
  auto* config_opt =
      app.add_option("--config", global.config_path, "JSON config file")
          ->check(CLI::ExistingFile);
  auto* seed_opt =
      app.add_option("--seed", global.seed, "override the simulation seed");
  auto* out_opt = app.add_option("--out", global.out_dir, "output directory");

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate->fallthrough();

  std::string dataset_dir;
  auto* run = app.add_subcommand("run", "simultaneous localization and calibration");
  run->fallthrough();
  run->add_option("--dataset", dataset_dir,
                  "dataset directory (default: simulate from config)");

  std::string loc_dataset_dir;
  std::string anchors_file;
  auto* localize = app.add_subcommand("localize", "fusion graph only, known anchors");
  localize->fallthrough();
  localize->add_option("--dataset", loc_dataset_dir,
                       "dataset directory (default: simulate from config)");
  localize->add_option("--anchors", anchors_file,
                       "anchor CSV (default: gauge anchors from config)");

  std::string trajectory_file;
  std::string ranges_file;
  std::vector<std::string> matrix_files;
  auto* calibrate =
      app.add_subcommand("calibrate", "calibration graph only, given a trajectory");
  calibrate->fallthrough();
  calibrate->add_option("--trajectory", trajectory_file,
                        "global trajectory file (.tum or .csv)");
  calibrate->add_option("--ranges", ranges_file, "tag-to-anchor range CSV");
  calibrate->add_option("--matrix", matrix_files,
                        "inter-anchor range matrix (repeatable; self-calibration mode)");

  std::string estimate_file;
  std::string reference_file;
  std::string est_anchors_file;
  std::string ref_anchors_file;
  double eval_tolerance = 0.05;
  auto* evaluate = app.add_subcommand("evaluate", "score estimates against references");
  evaluate->fallthrough();
  evaluate->add_option("--estimate", estimate_file, "estimated trajectory (.tum/.csv)");
  evaluate->add_option("--reference", reference_file, "reference trajectory (.tum/.csv)");
  evaluate->add_option("--est-anchors", est_anchors_file, "estimated anchor CSV");
  evaluate->add_option("--ref-anchors", ref_anchors_file, "reference anchor CSV");
  evaluate->add_option("--assoc-tolerance", eval_tolerance,
                       "timestamp association tolerance [s]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  global.seed_set = seed_opt->count() > 0;
  global.out_set = out_opt->count() > 0;
  (void)config_opt;

  try {
    if (simulate->parsed()) return cmd_simulate(global);
    if (run->parsed()) return cmd_run(global, dataset_dir);
    if (localize->parsed()) return cmd_localize(global, loc_dataset_dir, anchors_file);
    if (calibrate->parsed()) {
      return cmd_calibrate(global, trajectory_file, ranges_file, matrix_files);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(global, estimate_file, reference_file, est_anchors_file,
                          ref_anchors_file, eval_tolerance);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const EmptyAssociation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const GaugeMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const InconsistentRanges& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const InsufficientRanges& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
  return 0;
}
