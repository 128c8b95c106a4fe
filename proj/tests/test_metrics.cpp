#include <doctest.h>

#include <cmath>
#include <random>

#include "uwbfgo/metrics.hpp"

using namespace uwbfgo;

namespace {

struct Rng {
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  Vector3 vec3(double lo, double hi) {
    return Vector3(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi));
  }
  Pose pose() {
    Vector3 axis = vec3(-1.0, 1.0);
    if (axis.norm() < 1e-6) axis = Vector3::UnitZ();
    axis.normalize();
    return Pose(Rotation3::exp(axis * uniform(-2.0, 2.0)), vec3(-3.0, 3.0));
  }
  std::mt19937_64 gen;
};

std::vector<TimedPose> as_trajectory(const std::vector<Vector3>& pts, double dt = 0.1) {
  std::vector<TimedPose> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.push_back(TimedPose{dt * static_cast<double>(i),
                            Pose(Rotation3(), pts[i])});
  }
  return out;
}

}  // namespace

TEST_CASE("umeyama alignment recovers a known rigid transform") {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const Pose truth = rng.pose();
    std::vector<Vector3> ref, est;
    for (int i = 0; i < 12; ++i) {
      const Vector3 p = rng.vec3(-4.0, 4.0);
      ref.push_back(p);
      est.push_back(transform_point(inverse(truth), p));
    }
    const Pose fit = align_umeyama(est, ref);
    const PoseDelta d = pose_delta(fit, truth);
    CHECK(d.rotation_rad < 1e-9);
    CHECK(d.translation_m < 1e-9);
  }
}

TEST_CASE("umeyama refuses degenerate geometry") {
  const std::vector<Vector3> two = {{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(align_umeyama(two, two), DegenerateAlignment);
  std::vector<Vector3> line;
  for (int i = 0; i < 8; ++i) line.push_back(Vector3(0.5 * i, 1.0 * i, 0.0));
  CHECK_THROWS_AS(align_umeyama(line, line), DegenerateAlignment);
  const std::vector<Vector3> a = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  const std::vector<Vector3> b = {{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(align_umeyama(a, b), DegenerateAlignment);
}

TEST_CASE("trajectory error is zero against itself") {
  Rng rng(5);
  std::vector<Vector3> pts;
  for (int i = 0; i < 40; ++i) pts.push_back(rng.vec3(-3, 3));
  const auto traj = as_trajectory(pts);
  const auto rep = trajectory_error(traj, traj, false);
  CHECK(rep.pairs == traj.size());
  CHECK(rep.rmse == 0.0);
  CHECK(rep.max == 0.0);
  CHECK(rep.min == 0.0);
  REQUIRE(rep.errors.size() == traj.size());
  REQUIRE(rep.times.size() == traj.size());
}

TEST_CASE("trajectory error statistics match hand-planted offsets") {
  std::vector<Vector3> ref_pts, est_pts;
  const std::vector<double> planted = {0.1, 0.3, 0.2, 0.5, 0.4, 0.25};
  for (std::size_t i = 0; i < planted.size(); ++i) {
    // non-collinear base so nothing degenerates downstream
    const Vector3 p(static_cast<double>(i), std::sin(1.7 * i), 0.4 * (i % 3));
    ref_pts.push_back(p);
    est_pts.push_back(p + Vector3(planted[i], 0, 0));
  }
  const auto rep =
      trajectory_error(as_trajectory(est_pts), as_trajectory(ref_pts), false);
  REQUIRE(rep.pairs == planted.size());
  double sq = 0.0;
  for (const double e : planted) sq += e * e;
  CHECK(rep.rmse == doctest::Approx(std::sqrt(sq / planted.size())).epsilon(1e-12));
  CHECK(rep.max == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.min == doctest::Approx(0.1).epsilon(1e-12));
  for (std::size_t i = 0; i < planted.size(); ++i) {
    CHECK(rep.errors[i] == doctest::Approx(planted[i]).epsilon(1e-12));
  }
}

TEST_CASE("pre-alignment removes a rigid offset and reports it") {
  Rng rng(99);
  const Pose offset = rng.pose();
  std::vector<Vector3> ref_pts;
  for (int i = 0; i < 30; ++i) ref_pts.push_back(rng.vec3(-4, 4));
  std::vector<Vector3> est_pts;
  for (const auto& p : ref_pts) est_pts.push_back(transform_point(inverse(offset), p));
  const auto rep =
      trajectory_error(as_trajectory(est_pts), as_trajectory(ref_pts), true);
  CHECK(rep.rmse < 1e-9);
  const PoseDelta d = pose_delta(rep.alignment, offset);
  CHECK(d.rotation_rad < 1e-9);
  CHECK(d.translation_m < 1e-9);
  // without the alignment the offset shows up raw
  const auto raw =
      trajectory_error(as_trajectory(est_pts), as_trajectory(ref_pts), false);
  CHECK(raw.rmse > 0.1);
}

TEST_CASE("association respects the timestamp tolerance") {
  std::vector<Vector3> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(Vector3(i, std::cos(0.9 * i), 0.2 * (i % 4)));
  const auto ref = as_trajectory(pts);
  // shift estimate times by 30 ms: inside the 50 ms default gate
  auto est = ref;
  for (auto& p : est) p.t += 0.03;
  CHECK(trajectory_error(est, ref, false).pairs == ref.size());
  // disjoint time spans: nothing associates
  est = ref;
  for (auto& p : est) p.t += 100.0;
  CHECK_THROWS_AS(trajectory_error(est, ref, false), EmptyAssociation);
  // but a gate wider than the gap accepts it again
  CHECK(trajectory_error(est, ref, false, 200.0).pairs == ref.size());
  // estimates outside the reference span associate to nothing
  est = ref;
  est.push_back(TimedPose{1e6, Pose()});
  CHECK(trajectory_error(est, ref, false).pairs == ref.size());
}

TEST_CASE("anchor error scores exactly the free scalars") {
  // five free coordinates across four corner anchors, staggered heights known
  AnchorMap est;
  est.add("A1", Vector3(0, 0, 2.08), {true, true, true});
  est.add("A2", Vector3(0.0398, 2.8950, 0.98), {false, false, true});
  est.add("A3", Vector3(4.0480, 0, 0.78), {false, true, true});
  est.add("A4", Vector3(4.4140, 2.1836, 0.30), {false, false, true});
  AnchorMap ref;
  ref.add("A1", Vector3(0, 0, 2.08));
  ref.add("A2", Vector3(0.12, 2.93, 0.98));
  ref.add("A3", Vector3(4.20, 0, 0.78));
  ref.add("A4", Vector3(4.20, 3.00, 0.30));
  // survey disagrees with the estimate's pinned coordinates on purpose: pinned
  // scalars must not be scored
  ref.at(2).position.x() = 4.12;
  ref.at(3).position.x() = 4.32;

  const auto rep = anchor_error(est, ref);
  REQUIRE(rep.scalars.size() == 5);
  CHECK(rep.scalars[0].name == "A2.x");
  CHECK(rep.scalars[1].name == "A2.y");
  CHECK(rep.scalars[2].name == "A3.x");
  CHECK(rep.scalars[3].name == "A4.x");
  CHECK(rep.scalars[4].name == "A4.y");
  CHECK(rep.scalars[0].error == doctest::Approx(0.0802).epsilon(1e-12));
  CHECK(rep.scalars[1].error == doctest::Approx(0.0350).epsilon(1e-12));
  CHECK(rep.scalars[2].error == doctest::Approx(4.12 - 4.0480).epsilon(1e-12));
  CHECK(rep.scalars[3].error == doctest::Approx(4.4140 - 4.32).epsilon(1e-12));
  CHECK(rep.scalars[4].error == doctest::Approx(0.8164).epsilon(1e-12));
  double sq = 0.0;
  for (const auto& s : rep.scalars) sq += s.error * s.error;
  CHECK(rep.rmse == doctest::Approx(std::sqrt(sq / 5.0)).epsilon(1e-12));
}

TEST_CASE("anchor error rejects mismatched maps") {
  AnchorMap a, b;
  a.add("A1", Vector3::Zero(), {true, true, true});
  a.add("A2", Vector3::Zero());
  b.add("A1", Vector3::Zero(), {true, true, true});
  CHECK_THROWS_AS(anchor_error(a, b), GaugeMismatch);
  b.add("A9", Vector3::Zero());
  CHECK_THROWS_AS(anchor_error(a, b), GaugeMismatch);
}

TEST_CASE("fully pinned maps have nothing to score") {
  AnchorMap a, b;
  a.add("A1", Vector3(1, 2, 3), {true, true, true});
  b.add("A1", Vector3(9, 9, 9), {true, true, true});
  const auto rep = anchor_error(a, b);
  CHECK(rep.scalars.empty());
  CHECK(rep.rmse == 0.0);
}
