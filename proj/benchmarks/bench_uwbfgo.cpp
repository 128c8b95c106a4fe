#include <benchmark/benchmark.h>

#include "uwbfgo/factors.hpp"
#include "uwbfgo/geometry.hpp"
#include "uwbfgo/pipeline.hpp"
#include "uwbfgo/simulator.hpp"
#include "uwbfgo/solver.hpp"
#include "uwbfgo/trilateration.hpp"

namespace {

using namespace uwbfgo;

void BM_Se3ExpLog(benchmark::State& state) {
  Vector6 tangent;
  tangent << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
  for (auto _ : state) {
    const Pose p = se3_exp(tangent);
    benchmark::DoNotOptimize(se3_log(p));
  }
}
BENCHMARK(BM_Se3ExpLog);

void BM_PoseCompose(benchmark::State& state) {
  const Pose a(Rotation3::rot_z(0.3), Vector3(1.0, 2.0, 0.5));
  const Pose b(Rotation3::rot_x(-0.2), Vector3(0.4, -0.1, 0.2));
  for (auto _ : state) {
    benchmark::DoNotOptimize(compose(a, b));
  }
}
BENCHMARK(BM_PoseCompose);

void BM_Trilaterate(benchmark::State& state) {
  const SimConfig config = reference_sim_config();
  const AnchorMap& anchors = config.anchors_truth;
  const Vector3 tag(2.0, 1.5, 0.3);
  std::vector<std::pair<std::string, double>> ranges;
  for (const auto& a : anchors) ranges.emplace_back(a.id, (a.position - tag).norm());
  for (auto _ : state) {
    benchmark::DoNotOptimize(trilaterate_tag(ranges, anchors, anchors.centroid()));
  }
}
BENCHMARK(BM_Trilaterate);

void BM_SelfCalibrate(benchmark::State& state) {
  const SimConfig config = reference_sim_config();
  const AnchorMap& truth = config.anchors_truth;
  const auto n = static_cast<Eigen::Index>(truth.size());
  Eigen::MatrixXd ranges(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      ranges(i, j) = (truth.at(static_cast<std::size_t>(i)).position -
                      truth.at(static_cast<std::size_t>(j)).position)
                         .norm();
    }
  }
  AnchorMap gauge;
  gauge.add("A1", Vector3(0, 0, 2.08), {true, true, true});
  gauge.add("A2", Vector3(0, 3.0, 0.98), {false, false, true});
  gauge.add("A3", Vector3(4.2, 0, 0.78), {false, true, true});
  gauge.add("A4", Vector3(4.2, 3.0, 0.30), {false, false, true});
  std::vector<double> heights = {2.08, 0.98, 0.78, 0.30};
  for (auto _ : state) {
    benchmark::DoNotOptimize(self_calibrate_anchors(ranges, gauge, heights));
  }
}
BENCHMARK(BM_SelfCalibrate);

void BM_FusionSolve(benchmark::State& state) {
  // Small pose graph: chain of relative-pose factors plus position pulls.
  const int n = static_cast<int>(state.range(0));
  std::vector<Pose> truth;
  for (int i = 0; i < n; ++i) {
    truth.emplace_back(Rotation3::rot_z(0.05 * i), Vector3(0.1 * i, 0.02 * i, 0.0));
  }
  for (auto _ : state) {
    Problem problem;
    std::vector<VariableId> ids;
    for (int i = 0; i < n; ++i) {
      // Perturbed initial values so the solver has actual work to do.
      Pose init = truth[static_cast<std::size_t>(i)];
      init.translation += Vector3(0.01 * i, -0.005 * i, 0.0);
      ids.push_back(problem.add_pose(init, i == 0
                                               ? std::array<bool, 6>{true, true, true,
                                                                     true, true, true}
                                               : std::array<bool, 6>{}));
    }
    for (int i = 1; i < n; ++i) {
      add_relative_pose_factor(problem, ids[static_cast<std::size_t>(i)],
                               ids[static_cast<std::size_t>(i - 1)],
                               truth[static_cast<std::size_t>(i)],
                               truth[static_cast<std::size_t>(i - 1)]);
    }
    for (int i = 0; i < n; ++i) {
      const UwbFix fix{0.1 * i, truth[static_cast<std::size_t>(i)].translation};
      add_uwb_position_factor(problem, ids[static_cast<std::size_t>(i)], fix,
                              Loss::huber(0.1));
    }
    SolverOptions options;
    benchmark::DoNotOptimize(solve(problem, options));
  }
}
BENCHMARK(BM_FusionSolve)->Arg(20)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
