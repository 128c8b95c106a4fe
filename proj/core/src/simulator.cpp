#include "uwbfgo/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>

namespace uwbfgo {

namespace {
constexpr double kTau = 2.0 * std::numbers::pi;
}

double NoiseStream::uniform() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double NoiseStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on explicit 53-bit uniforms: bit-identical on every platform.
  const double u1 = static_cast<double>((rng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
  const double u2 = uniform();
  const double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(kTau * u2);
  has_spare_ = true;
  return mag * std::cos(kTau * u2);
}

Vector3 NoiseStream::gaussian3() {
  Vector3 v;
  v.x() = gaussian();
  v.y() = gaussian();
  v.z() = gaussian();
  return v;
}

std::uint64_t channel_seed(std::uint64_t master_seed, const std::string& channel) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  const auto eat = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (int i = 0; i < 8; ++i) eat(static_cast<unsigned char>(master_seed >> (8 * i)));
  for (const char c : channel) eat(static_cast<unsigned char>(c));
  return h;
}

namespace {

struct PathSample {
  Vector3 position = Vector3::Zero();
  Vector3 tangent = Vector3::UnitX();  // unit, direction of travel
};

// Constant-speed arclength tour over line and arc primitives.
class WaypointPath {
 public:
  explicit WaypointPath(const WaypointTrajectory& spec) : speed_(spec.speed) {
    std::vector<Vector3> pts;
    for (const auto& w : spec.waypoints) {
      if (pts.empty() || (w - pts.back()).norm() > 1e-12) pts.push_back(w);
    }
    if (pts.size() > 2 && (pts.front() - pts.back()).norm() <= 1e-9) {
      closed_ = true;
      pts.pop_back();
    }
    if (pts.size() < 2) {
      throw ConfigError("trajectory needs at least 2 distinct waypoints");
    }

    const int n = static_cast<int>(pts.size());
    const int nseg = closed_ ? n : n - 1;
    std::vector<Vector3> dir(nseg);
    std::vector<double> len(nseg);
    for (int s = 0; s < nseg; ++s) {
      const Vector3 d = pts[(s + 1) % n] - pts[s];
      len[s] = d.norm();
      dir[s] = d / len[s];
    }

    // Corner rounding: trim both adjacent segments by d = r*tan(theta/2) and
    // bridge with a tangent arc so the heading never jumps.
    std::vector<double> cut(n, 0.0), theta(n, 0.0);
    const auto corner = [&](int vtx, int seg_in, int seg_out) {
      const double th =
          std::atan2(dir[seg_in].cross(dir[seg_out]).norm(), dir[seg_in].dot(dir[seg_out]));
      if (th > std::numbers::pi - 1e-6) {
        throw ConfigError("trajectory reverses direction at a waypoint; heading cannot stay continuous");
      }
      theta[vtx] = th;
      if (th > 1e-9 && spec.corner_radius > 0.0) {
        cut[vtx] = spec.corner_radius * std::tan(0.5 * th);
      }
    };
    if (closed_) {
      for (int v = 0; v < n; ++v) corner(v, (v + n - 1) % n, v);
    } else {
      for (int v = 1; v <= n - 2; ++v) corner(v, v - 1, v);
    }

    // Shrink cuts where two corners would not fit on a short segment.
    std::vector<double> scale(n, 1.0);
    for (int s = 0; s < nseg; ++s) {
      const int va = s, vb = (s + 1) % n;
      const double need = cut[va] + cut[vb];
      if (need > 0.98 * len[s]) {
        const double f = 0.98 * len[s] / need;
        scale[va] = std::min(scale[va], f);
        scale[vb] = std::min(scale[vb], f);
      }
    }
    std::vector<double> radius(n, 0.0);
    for (int v = 0; v < n; ++v) {
      cut[v] *= scale[v];
      radius[v] = theta[v] > 1e-9 ? cut[v] / std::tan(0.5 * theta[v]) : 0.0;
    }

    const auto add_line = [this](const Vector3& a, const Vector3& b) {
      const double l = (b - a).norm();
      if (l > 1e-12) prims_.push_back(Prim{Prim::Kind::Line, a, (b - a) / l, Vector3::Zero(), 0.0, l});
    };
    const auto add_arc = [&](int vtx, int seg_in, int seg_out) {
      if (cut[vtx] <= 1e-12 || theta[vtx] <= 1e-9) return;
      const Vector3& u = dir[seg_in];
      const Vector3& v = dir[seg_out];
      const double r = radius[vtx];
      const Vector3 center = pts[vtx] + (v - u).normalized() * (r / std::sin(0.5 * theta[vtx]));
      const Vector3 entry = pts[vtx] - u * cut[vtx];
      prims_.push_back(Prim{Prim::Kind::Arc, center, (entry - center) / r, u, r, r * theta[vtx]});
    };
    for (int s = 0; s < nseg; ++s) {
      const int va = s, vb = (s + 1) % n;
      add_line(pts[va] + dir[s] * cut[va], pts[vb] - dir[s] * cut[vb]);
      if (closed_) {
        add_arc(vb, s, (s + 1) % nseg);
      } else if (vb <= n - 2) {
        add_arc(vb, s, s + 1);
      }
    }
    if (prims_.empty()) throw ConfigError("degenerate trajectory (zero path length)");

    cum_.reserve(prims_.size());
    for (const auto& p : prims_) {
      total_ += p.len;
      cum_.push_back(total_);
    }
  }

  PathSample sample(double t) const {
    double s = speed_ * t;
    if (closed_) {
      s = std::fmod(s, total_);
      if (s < 0.0) s += total_;
    } else {
      s = std::clamp(s, 0.0, total_);
    }
    std::size_t i = std::upper_bound(cum_.begin(), cum_.end(), s) - cum_.begin();
    if (i >= prims_.size()) i = prims_.size() - 1;
    const double local = s - (i == 0 ? 0.0 : cum_[i - 1]);
    const Prim& p = prims_[i];
    PathSample out;
    if (p.kind == Prim::Kind::Line) {
      out.position = p.a + p.b * local;
      out.tangent = p.b;
    } else {
      const double phi = local / p.r;
      out.position = p.a + p.r * (std::cos(phi) * p.b + std::sin(phi) * p.c);
      out.tangent = -std::sin(phi) * p.b + std::cos(phi) * p.c;
    }
    return out;
  }

 private:
  struct Prim {
    enum class Kind { Line, Arc };
    Kind kind;
    // Line: a = start, b = unit direction. Arc: a = center, b/c = in-plane
    // orthonormal basis with c the entry tangent, r = radius.
    Vector3 a, b, c;
    double r = 0.0;
    double len = 0.0;
  };

  std::vector<Prim> prims_;
  std::vector<double> cum_;
  double total_ = 0.0;
  double speed_ = 1.0;
  bool closed_ = false;
};

PathSample sample_lissajous(const LissajousTrajectory& spec, double t) {
  PathSample out;
  Vector3 vel;
  for (int a = 0; a < 3; ++a) {
    const double arg = kTau * spec.frequency(a) * t + spec.phase(a);
    out.position(a) = spec.center(a) + spec.amplitude(a) * std::sin(arg);
    vel(a) = spec.amplitude(a) * kTau * spec.frequency(a) * std::cos(arg);
  }
  const double v = vel.norm();
  out.tangent = v > 1e-12 ? Vector3(vel / v) : Vector3::UnitX();
  return out;
}

Pose pose_from_sample(const PathSample& s) {
  // Ground robot: heading follows the planar direction of travel.
  const double planar = std::hypot(s.tangent.x(), s.tangent.y());
  const double yaw = planar > 1e-12 ? std::atan2(s.tangent.y(), s.tangent.x()) : 0.0;
  return Pose(Rotation3::rot_z(yaw), s.position);
}

std::function<Pose(double)> make_pose_sampler(const TrajectoryConfig& trajectory) {
  if (const auto* wp = std::get_if<WaypointTrajectory>(&trajectory)) {
    auto path = std::make_shared<WaypointPath>(*wp);
    return [path](double t) { return pose_from_sample(path->sample(t)); };
  }
  const auto spec = std::get<LissajousTrajectory>(trajectory);
  return [spec](double t) { return pose_from_sample(sample_lissajous(spec, t)); };
}

bool in_dropout(const std::vector<Dropout>& dropouts, Dropout::Sensor sensor, double t) {
  for (const auto& d : dropouts) {
    if (d.sensor == sensor && t >= d.start && t <= d.end) return true;
  }
  return false;
}

}  // namespace

void validate(const SimConfig& config) {
  if (!(config.duration > 0.0)) throw ConfigError("duration must be positive");
  if (!(config.odom_rate > 0.0)) throw ConfigError("odom_rate must be positive");
  if (!(config.range_rate > 0.0)) throw ConfigError("range_rate must be positive");
  const auto& n = config.noise;
  if (n.sigma_range < 0.0 || n.odom_rot_noise < 0.0 || n.odom_trans_noise < 0.0 ||
      n.odom_drift_rate < 0.0) {
    throw ConfigError("noise levels must be non-negative");
  }
  if (config.nlos.probability < 0.0 || config.nlos.probability > 1.0) {
    throw ConfigError("nlos probability must lie in [0, 1]");
  }
  if (config.nlos.probability > 0.0 &&
      (config.nlos.bias_min <= 0.0 || config.nlos.bias_max < config.nlos.bias_min)) {
    throw ConfigError("nlos bias range must be positive with min <= max");
  }
  for (const auto& d : config.dropouts) {
    if (d.start < 0.0 || d.end < d.start || d.end > config.duration) {
      throw ConfigError("dropout interval must lie inside [0, duration]");
    }
  }
  if (const auto* wp = std::get_if<WaypointTrajectory>(&config.trajectory)) {
    if (wp->waypoints.size() < 2) throw ConfigError("trajectory needs at least 2 waypoints");
    if (!(wp->speed > 0.0)) throw ConfigError("trajectory speed must be positive");
    if (wp->corner_radius < 0.0) throw ConfigError("corner radius must be non-negative");
  }
}

SimDataset generate(const SimConfig& config) {
  validate(config);
  const auto pose_at = make_pose_sampler(config.trajectory);

  SimDataset ds;
  ds.truth_T_um = config.map_frame_offset;
  ds.truth_anchors = config.anchors_truth;

  const long n_odom = std::lround(config.duration * config.odom_rate);
  const long n_range = std::lround(config.duration * config.range_rate);

  std::vector<double> times;
  times.reserve(n_odom + n_range);
  for (long k = 0; k < n_odom; ++k) times.push_back(static_cast<double>(k) / config.odom_rate);
  for (long j = 0; j < n_range; ++j) times.push_back(static_cast<double>(j) / config.range_rate);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  ds.ground_truth.reserve(times.size());
  for (const double t : times) ds.ground_truth.push_back(TimedPose{t, pose_at(t)});

  // Odometry lives in the map frame: T_mr = T_um^-1 * T_ur.
  const Pose t_mu = inverse(config.map_frame_offset);
  const auto map_pose = [&](double t) { return compose(t_mu, pose_at(t)); };
  const auto& noise = config.noise;
  const bool clean_odom = noise.odom_rot_noise == 0.0 && noise.odom_trans_noise == 0.0 &&
                          noise.odom_drift_rate == 0.0;
  ds.odometry.reserve(n_odom);
  if (clean_odom) {
    for (long k = 0; k < n_odom; ++k) {
      const double t = static_cast<double>(k) / config.odom_rate;
      ds.odometry.push_back(OdometryPose{t, map_pose(t)});
    }
  } else {
    NoiseStream odo(channel_seed(config.seed, "odom"));
    Vector3 bias_dir = Vector3::Zero();
    if (noise.odom_drift_rate > 0.0) {
      NoiseStream drift(channel_seed(config.seed, "drift"));
      bias_dir = drift.gaussian3();
      const double norm = bias_dir.norm();
      bias_dir = norm > 1e-12 ? Vector3(bias_dir / norm) : Vector3::UnitX();
    }
    Pose prev_true = map_pose(0.0);
    Pose current = prev_true;
    ds.odometry.push_back(OdometryPose{0.0, current});
    for (long k = 1; k < n_odom; ++k) {
      const double t = static_cast<double>(k) / config.odom_rate;
      const Pose true_k = map_pose(t);
      const Pose rel = compose(inverse(prev_true), true_k);
      const Vector3 rot_err = noise.odom_rot_noise * odo.gaussian3();
      const Vector3 trans_err = noise.odom_trans_noise * odo.gaussian3() +
                                noise.odom_drift_rate * rel.translation.norm() * bias_dir;
      current = compose(current, compose(rel, Pose(Rotation3::exp(rot_err), trans_err)));
      ds.odometry.push_back(OdometryPose{t, current});
      prev_true = true_k;
    }
  }

  // All anchors answer on a shared tick, each with its own noise stream.
  std::vector<NoiseStream> range_noise;
  std::vector<NoiseStream> nlos_noise;
  range_noise.reserve(config.anchors_truth.size());
  nlos_noise.reserve(config.anchors_truth.size());
  for (const auto& a : config.anchors_truth) {
    range_noise.emplace_back(channel_seed(config.seed, "range:" + a.id));
    nlos_noise.emplace_back(channel_seed(config.seed, "nlos:" + a.id));
  }
  ds.ranges.reserve(n_range * config.anchors_truth.size());
  for (long j = 0; j < n_range; ++j) {
    const double t = static_cast<double>(j) / config.range_rate;
    const Vector3 tag = pose_at(t).translation;
    std::size_t i = 0;
    for (const auto& anchor : config.anchors_truth) {
      const double dist = (anchor.position - tag).norm();
      double bias = 0.0;
      if (config.nlos.probability > 0.0 && nlos_noise[i].uniform() < config.nlos.probability) {
        bias = config.nlos.bias_min +
               nlos_noise[i].uniform() * (config.nlos.bias_max - config.nlos.bias_min);
        ++ds.stats.nlos_ranges;
      }
      double range = dist + noise.sigma_range * range_noise[i].gaussian() + bias;
      int attempts = 0;
      while (range <= 0.0 && noise.sigma_range > 0.0 && attempts < 100) {
        range = dist + noise.sigma_range * range_noise[i].gaussian() + bias;
        ++ds.stats.resampled_ranges;
        ++attempts;
      }
      if (range <= 0.0) {
        ++ds.stats.skipped_ranges;  // tag sitting on a silent anchor; give up
      } else {
        ds.ranges.push_back(RangeMeasurement{t, anchor.id, range});
      }
      ++i;
    }
  }

  if (!config.dropouts.empty()) return degrade(ds, config.dropouts);
  return ds;
}

SimDataset degrade(const SimDataset& dataset, const std::vector<Dropout>& dropouts) {
  SimDataset out = dataset;
  std::erase_if(out.odometry, [&](const OdometryPose& o) {
    return in_dropout(dropouts, Dropout::Sensor::Odom, o.t);
  });
  std::erase_if(out.ranges, [&](const RangeMeasurement& r) {
    return in_dropout(dropouts, Dropout::Sensor::Uwb, r.t);
  });
  return out;
}

SimConfig reference_sim_config() {
  SimConfig config;
  config.seed = 1;
  config.duration = 30.0;
  // 4.2 m x 3.0 m room, anchors on tripods of different known heights.
  config.anchors_truth.add("A1", Vector3(0.0, 0.0, 2.08));
  config.anchors_truth.add("A2", Vector3(0.0, 3.00, 0.98));
  config.anchors_truth.add("A3", Vector3(4.20, 0.0, 0.78));
  config.anchors_truth.add("A4", Vector3(4.20, 3.00, 0.30));
  // Closed rectangle loop, started shortly before the first corner so the
  // frame-transform initialization sees curvature early in the run.
  WaypointTrajectory sweep;
  sweep.waypoints = {Vector3(3.0, 0.5, 0.3), Vector3(3.6, 0.5, 0.3),
                     Vector3(3.6, 2.5, 0.3), Vector3(0.6, 2.5, 0.3),
                     Vector3(0.6, 0.5, 0.3), Vector3(3.0, 0.5, 0.3)};
  sweep.speed = 0.5;
  sweep.corner_radius = 0.3;
  config.trajectory = sweep;
  // Odometry frame deliberately offset from the global frame.
  config.map_frame_offset = Pose(Rotation3::rot_z(0.5235987755982988),  // 30 deg
                                 Vector3(1.2, 0.8, 0.0));
  return config;
}

}  // namespace uwbfgo
