#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "uwbfgo/simulator.hpp"

using namespace uwbfgo;

namespace {

// exact-time lookup: range ticks and ground-truth samples share timestamps
const Pose& truth_at(const SimDataset& ds, double t) {
  for (const auto& p : ds.ground_truth) {
    if (p.t == t) return p.pose;
  }
  REQUIRE(false);
  return ds.ground_truth.front().pose;
}

SimConfig quiet_reference() {
  SimConfig c = reference_sim_config();
  c.noise = NoiseConfig{0.0, 0.0, 0.0, 0.0};
  return c;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  SimConfig c = reference_sim_config();
  c.seed = 77;
  const SimDataset a = generate(c);
  const SimDataset b = generate(c);
  REQUIRE(a.ranges.size() == b.ranges.size());
  REQUIRE(a.odometry.size() == b.odometry.size());
  for (std::size_t i = 0; i < a.ranges.size(); ++i) {
    CHECK(a.ranges[i].t == b.ranges[i].t);
    CHECK(a.ranges[i].anchor_id == b.ranges[i].anchor_id);
    CHECK(a.ranges[i].range == b.ranges[i].range);
  }
  for (std::size_t i = 0; i < a.odometry.size(); ++i) {
    CHECK((a.odometry[i].pose.translation - b.odometry[i].pose.translation).norm() == 0.0);
    CHECK(a.odometry[i].pose.rotation.quaternion().coeffs() ==
          b.odometry[i].pose.rotation.quaternion().coeffs());
  }
  c.seed = 78;
  const SimDataset d = generate(c);
  bool any_different = false;
  for (std::size_t i = 0; i < std::min(a.ranges.size(), d.ranges.size()); ++i) {
    if (a.ranges[i].range != d.ranges[i].range) { any_different = true; break; }
  }
  CHECK(any_different);
}

TEST_CASE("noise-free ranges equal the anchor-tag distances") {
  SimConfig c = quiet_reference();
  c.seed = 5;
  const SimDataset ds = generate(c);
  REQUIRE(!ds.ranges.empty());
  for (const auto& r : ds.ranges) {
    const Vector3 tag = truth_at(ds, r.t).translation;
    const AnchorEntry* a = ds.truth_anchors.find(r.anchor_id);
    REQUIRE(a != nullptr);
    CHECK(std::abs((a->position - tag).norm() - r.range) < 1e-12);
  }
}

TEST_CASE("noise-free odometry is the truth expressed in the map frame") {
  SimConfig c = quiet_reference();
  const SimDataset ds = generate(c);
  REQUIRE(!ds.odometry.empty());
  const Pose t_mu = inverse(ds.truth_T_um);
  for (const auto& o : ds.odometry) {
    const Pose expected = compose(t_mu, truth_at(ds, o.t));
    const PoseDelta d = pose_delta(o.pose, expected);
    CHECK(d.rotation_rad < 1e-12);
    CHECK(d.translation_m < 1e-12);
  }
}

TEST_CASE("range noise has the configured scale") {
  SimConfig c;
  c.seed = 123;
  c.duration = 30.0;
  c.odom_rate = 10.0;
  c.range_rate = 100.0;  // 12000 samples over 4 anchors
  c.anchors_truth = reference_sim_config().anchors_truth;
  LissajousTrajectory still;
  still.amplitude = Vector3::Zero();
  still.center = Vector3(2.0, 1.5, 0.3);
  c.trajectory = still;
  c.noise = NoiseConfig{0.05, 0.0, 0.0, 0.0};
  const SimDataset ds = generate(c);
  REQUIRE(ds.ranges.size() >= 10000);
  double sum = 0.0, sq = 0.0;
  for (const auto& r : ds.ranges) {
    const AnchorEntry* a = ds.truth_anchors.find(r.anchor_id);
    const double err = r.range - (a->position - still.center).norm();
    sum += err;
    sq += err * err;
  }
  const double n = static_cast<double>(ds.ranges.size());
  const double mean = sum / n;
  const double sigma = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.003);
  CHECK(sigma > 0.045);
  CHECK(sigma < 0.055);
  CHECK(ds.stats.skipped_ranges == 0);
}

TEST_CASE("odometry drift grows with distance traveled") {
  SimConfig c = quiet_reference();
  c.noise.odom_drift_rate = 0.01;  // 1% of distance
  c.seed = 9;
  const SimDataset ds = generate(c);
  const Pose t_mu = inverse(ds.truth_T_um);
  auto err_at = [&](std::size_t i) {
    const Pose expected = compose(t_mu, truth_at(ds, ds.odometry[i].t));
    return (ds.odometry[i].pose.translation - expected.translation).norm();
  };
  const std::size_t n = ds.odometry.size();
  const double early = err_at(n / 10);
  const double late = err_at(n - 1);
  CHECK(late > early);
  // the reference sweep covers ~15 m; 1%/m leaves a few-decimeter tail
  CHECK(late > 0.03);
  CHECK(late < 0.6);
}

TEST_CASE("uwb dropout removes exactly the covered ranges") {
  SimConfig c = quiet_reference();
  c.dropouts.push_back(Dropout{Dropout::Sensor::Uwb, 10.0, 15.0});
  const SimDataset ds = generate(c);
  REQUIRE(!ds.ranges.empty());
  for (const auto& r : ds.ranges) {
    CHECK((r.t < 10.0 || r.t > 15.0));
  }
  // odometry untouched
  const SimDataset clean = generate(quiet_reference());
  CHECK(ds.odometry.size() == clean.odometry.size());
  // and the same interval survives everywhere else
  long removed = static_cast<long>(clean.ranges.size() - ds.ranges.size());
  long expected = static_cast<long>(std::count_if(
      clean.ranges.begin(), clean.ranges.end(),
      [](const RangeMeasurement& r) { return r.t >= 10.0 && r.t <= 15.0; }));
  CHECK(removed == expected);
}

TEST_CASE("odometry dropout leaves ranges alone") {
  SimConfig c = quiet_reference();
  c.dropouts.push_back(Dropout{Dropout::Sensor::Odom, 5.0, 8.0});
  const SimDataset ds = generate(c);
  for (const auto& o : ds.odometry) {
    CHECK((o.t < 5.0 || o.t > 8.0));
  }
  CHECK(ds.ranges.size() == generate(quiet_reference()).ranges.size());
}

TEST_CASE("degrade is the same filter applied after the fact") {
  SimConfig c = quiet_reference();
  const SimDataset clean = generate(c);
  const std::vector<Dropout> cuts = {Dropout{Dropout::Sensor::Uwb, 2.0, 4.0},
                                     Dropout{Dropout::Sensor::Odom, 20.0, 22.0}};
  const SimDataset cut = degrade(clean, cuts);
  SimConfig c2 = quiet_reference();
  c2.dropouts = cuts;
  const SimDataset direct = generate(c2);
  REQUIRE(cut.ranges.size() == direct.ranges.size());
  REQUIRE(cut.odometry.size() == direct.odometry.size());
  for (std::size_t i = 0; i < cut.ranges.size(); ++i) {
    CHECK(cut.ranges[i].range == direct.ranges[i].range);
  }
}

TEST_CASE("nlos biases the configured fraction of ranges upward") {
  SimConfig c = quiet_reference();
  c.seed = 31;
  c.range_rate = 40.0;
  c.nlos = NlosConfig{0.3, 0.5, 2.0};
  const SimDataset ds = generate(c);
  long biased = 0;
  for (const auto& r : ds.ranges) {
    const Vector3 tag = truth_at(ds, r.t).translation;
    const double err = r.range - (ds.truth_anchors.find(r.anchor_id)->position - tag).norm();
    if (err > 1e-9) {
      ++biased;
      CHECK(err >= 0.5 - 1e-9);
      CHECK(err <= 2.0 + 1e-9);
    } else {
      CHECK(std::abs(err) < 1e-9);  // line-of-sight stays exact (noise off)
    }
  }
  CHECK(biased == ds.stats.nlos_ranges);
  const double frac = static_cast<double>(biased) / static_cast<double>(ds.ranges.size());
  CHECK(frac > 0.25);
  CHECK(frac < 0.35);
}

TEST_CASE("lissajous truth follows the parametric curve") {
  SimConfig c;
  c.duration = 10.0;
  c.odom_rate = 10.0;
  c.range_rate = 1.0;
  c.anchors_truth = reference_sim_config().anchors_truth;
  LissajousTrajectory lj;
  lj.amplitude = Vector3(1.5, 1.0, 0.0);
  lj.frequency = Vector3(0.05, 0.10, 0.0);
  lj.phase = Vector3(0.0, M_PI / 2.0, 0.0);
  lj.center = Vector3(2.0, 1.5, 0.3);
  c.trajectory = lj;
  c.noise = NoiseConfig{0.0, 0.0, 0.0, 0.0};
  const SimDataset ds = generate(c);
  for (const auto& p : ds.ground_truth) {
    Vector3 expect;
    for (int a = 0; a < 3; ++a) {
      expect(a) = lj.center(a) +
                  lj.amplitude(a) *
                      std::sin(2.0 * M_PI * lj.frequency(a) * p.t + lj.phase(a));
    }
    CHECK((p.pose.translation - expect).norm() < 1e-9);
  }
}

TEST_CASE("channel seeds are stable and channel-separated") {
  const std::uint64_t a1 = channel_seed(1, "ranges");
  CHECK(a1 == channel_seed(1, "ranges"));
  CHECK(a1 != channel_seed(1, "odometry"));
  CHECK(a1 != channel_seed(2, "ranges"));
}

TEST_CASE("noise stream reproduces itself and has unit scale") {
  NoiseStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.gaussian() == b.gaussian());
  }
  NoiseStream u(7);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double g = u.gaussian();
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.03);
  NoiseStream v(9);
  for (int i = 0; i < 1000; ++i) {
    const double x = v.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("config validation rejects broken setups") {
  SimConfig ok = reference_sim_config();
  CHECK_NOTHROW(validate(ok));
  SimConfig c = ok;
  c.duration = 0.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.odom_rate = -1.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.noise.sigma_range = -0.1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.nlos.probability = 1.5;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.nlos = NlosConfig{0.5, 2.0, 1.0};  // min > max
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.dropouts.push_back(Dropout{Dropout::Sensor::Uwb, 20.0, 10.0});
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.dropouts.assign(1, Dropout{Dropout::Sensor::Uwb, 0.0, 1e9});
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.trajectory = WaypointTrajectory{{Vector3::Zero()}, 0.5, 0.3};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ok;
  c.trajectory = WaypointTrajectory{{Vector3::Zero(), Vector3::UnitX()}, 0.0, 0.3};
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("reference setup matches its documented shape") {
  const SimConfig c = reference_sim_config();
  REQUIRE(c.anchors_truth.size() == 4);
  CHECK((c.anchors_truth.at(0).position - Vector3(0, 0, 2.08)).norm() < 1e-12);
  CHECK((c.anchors_truth.at(3).position - Vector3(4.20, 3.00, 0.30)).norm() < 1e-12);
  const auto* wp = std::get_if<WaypointTrajectory>(&c.trajectory);
  REQUIRE(wp != nullptr);
  CHECK(wp->waypoints.size() >= 5);
  CHECK(wp->waypoints.front() == wp->waypoints.back());  // closed loop
  CHECK(c.map_frame_offset.translation.norm() > 0.1);  // non-trivial offset
  const SimDataset ds = generate(c);
  CHECK(ds.odometry.size() == 300);  // 30 s at 10 Hz
  CHECK(ds.ranges.size() == 1200);   // 4 anchors on shared ticks
}
