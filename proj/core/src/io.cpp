#include "uwbfgo/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <sstream>
#include <string_view>

#include <json.hpp>

namespace uwbfgo {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

namespace {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---- strict JSON access with path-qualified diagnostics -------------------

[[noreturn]] void cfg_fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) cfg_fail(path, "expected an object");
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
  expect_object(j, path);
  for (const auto& item : j.items()) {
    bool known = false;
    for (const auto a : allowed) known = known || item.key() == a;
    if (!known) cfg_fail(path, "unknown key '" + item.key() + "'");
  }
}

const json* find(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) cfg_fail(path, "expected a number");
  return j.get<double>();
}

double get_number(const json& j, const std::string& path, const char* key, double def) {
  const json* v = find(j, key);
  return v == nullptr ? def : as_number(*v, path + "." + key);
}

int get_int(const json& j, const std::string& path, const char* key, int def) {
  const json* v = find(j, key);
  if (v == nullptr) return def;
  if (!v->is_number_integer()) cfg_fail(path + "." + key, "expected an integer");
  return v->get<int>();
}

bool get_bool(const json& j, const std::string& path, const char* key, bool def) {
  const json* v = find(j, key);
  if (v == nullptr) return def;
  if (!v->is_boolean()) cfg_fail(path + "." + key, "expected a boolean");
  return v->get<bool>();
}

std::string require_string(const json& j, const std::string& path, const char* key) {
  const json* v = find(j, key);
  if (v == nullptr) cfg_fail(path, std::string("missing key '") + key + "'");
  if (!v->is_string()) cfg_fail(path + "." + key, "expected a string");
  return v->get<std::string>();
}

Vector3 as_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) cfg_fail(path, "expected an array of 3 numbers");
  Vector3 v;
  for (int i = 0; i < 3; ++i) v(i) = as_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

Vector3 get_vec3(const json& j, const std::string& path, const char* key,
                 const Vector3& def) {
  const json* v = find(j, key);
  return v == nullptr ? def : as_vec3(*v, path + "." + key);
}

std::array<bool, 3> as_bool3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) cfg_fail(path, "expected an array of 3 booleans");
  std::array<bool, 3> out{};
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_boolean()) cfg_fail(path + "[" + std::to_string(i) + "]", "expected a boolean");
    out[static_cast<std::size_t>(i)] = j[i].get<bool>();
  }
  return out;
}

Pose parse_pose(const json& j, const std::string& path) {
  check_keys(j, path, {"translation", "quaternion", "yaw_deg"});
  Pose p;
  p.translation = get_vec3(j, path, "translation", Vector3::Zero());
  const json* q = find(j, "quaternion");
  const json* yaw = find(j, "yaw_deg");
  if (q != nullptr && yaw != nullptr) {
    cfg_fail(path, "give either 'quaternion' or 'yaw_deg', not both");
  }
  if (q != nullptr) {
    const std::string qp = path + ".quaternion";
    check_keys(*q, qp, {"w", "x", "y", "z"});
    double c[4];
    const char* names[4] = {"w", "x", "y", "z"};
    for (int i = 0; i < 4; ++i) {
      const json* v = find(*q, names[i]);
      if (v == nullptr) cfg_fail(qp, std::string("missing key '") + names[i] + "'");
      c[i] = as_number(*v, qp + "." + names[i]);
    }
    const double norm = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]);
    if (!(norm > 1e-6)) cfg_fail(qp, "quaternion norm too small");
    p.rotation = Rotation3(c[0], c[1], c[2], c[3]);
  } else if (yaw != nullptr) {
    p.rotation = Rotation3::rot_z(as_number(*yaw, path + ".yaw_deg") *
                                  std::numbers::pi / 180.0);
  }
  return p;
}

Loss parse_loss(const json& j, const std::string& path, const Loss& def) {
  check_keys(j, path, {"type", "delta"});
  const std::string type = require_string(j, path, "type");
  if (type == "identity") {
    if (find(j, "delta") != nullptr) cfg_fail(path, "identity loss takes no 'delta'");
    return Loss::identity();
  }
  if (type == "huber") {
    const double delta = get_number(j, path, "delta", def.delta);
    if (!(delta > 0.0)) cfg_fail(path + ".delta", "must be positive");
    return Loss::huber(delta);
  }
  cfg_fail(path + ".type", "unknown loss type '" + type + "'");
}

SolverOptions parse_solver(const json& j, const std::string& path,
                           const SolverOptions& def) {
  check_keys(j, path,
             {"max_iterations", "initial_lambda", "lambda_up", "lambda_down",
              "relative_cost_tolerance", "parameter_tolerance",
              "absolute_cost_tolerance", "jacobian_mode"});
  SolverOptions o = def;
  o.max_iterations = get_int(j, path, "max_iterations", o.max_iterations);
  o.initial_lambda = get_number(j, path, "initial_lambda", o.initial_lambda);
  o.lambda_up = get_number(j, path, "lambda_up", o.lambda_up);
  o.lambda_down = get_number(j, path, "lambda_down", o.lambda_down);
  o.relative_cost_tolerance =
      get_number(j, path, "relative_cost_tolerance", o.relative_cost_tolerance);
  o.parameter_tolerance = get_number(j, path, "parameter_tolerance", o.parameter_tolerance);
  o.absolute_cost_tolerance =
      get_number(j, path, "absolute_cost_tolerance", o.absolute_cost_tolerance);
  if (const json* m = find(j, "jacobian_mode")) {
    const std::string mode = require_string(j, path, "jacobian_mode");
    if (mode == "numeric") {
      o.jacobian_mode = JacobianMode::Numeric;
    } else if (mode == "analytic_if_available") {
      o.jacobian_mode = JacobianMode::AnalyticIfAvailable;
    } else {
      cfg_fail(path + ".jacobian_mode",
               "expected 'numeric' or 'analytic_if_available'");
    }
    (void)m;
  }
  return o;
}

AnchorMap parse_anchor_list(const json& j, const std::string& path, bool with_fixed) {
  if (!j.is_array()) cfg_fail(path, "expected an array of anchors");
  AnchorMap map;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string ap = path + "[" + std::to_string(i) + "]";
    const json& a = j[i];
    if (with_fixed) {
      check_keys(a, ap, {"id", "position", "fixed"});
    } else {
      check_keys(a, ap, {"id", "position"});
    }
    const std::string id = require_string(a, ap, "id");
    const json* pos = find(a, "position");
    if (pos == nullptr) cfg_fail(ap, "missing key 'position'");
    std::array<bool, 3> fixed{false, false, false};
    if (with_fixed) {
      if (const json* f = find(a, "fixed")) fixed = as_bool3(*f, ap + ".fixed");
    }
    try {
      map.add(id, as_vec3(*pos, ap + ".position"), fixed);
    } catch (const std::invalid_argument& e) {
      cfg_fail(ap, e.what());
    }
  }
  return map;
}

TrajectoryConfig parse_trajectory(const json& j, const std::string& path) {
  expect_object(j, path);
  const std::string type = require_string(j, path, "type");
  if (type == "waypoints") {
    check_keys(j, path, {"type", "waypoints", "speed", "corner_radius"});
    WaypointTrajectory w;
    const json* pts = find(j, "waypoints");
    if (pts == nullptr || !pts->is_array()) cfg_fail(path, "missing 'waypoints' array");
    for (std::size_t i = 0; i < pts->size(); ++i) {
      w.waypoints.push_back(
          as_vec3((*pts)[i], path + ".waypoints[" + std::to_string(i) + "]"));
    }
    w.speed = get_number(j, path, "speed", w.speed);
    w.corner_radius = get_number(j, path, "corner_radius", w.corner_radius);
    return w;
  }
  if (type == "lissajous") {
    check_keys(j, path, {"type", "amplitude", "frequency", "phase", "center"});
    LissajousTrajectory l;
    l.amplitude = get_vec3(j, path, "amplitude", l.amplitude);
    l.frequency = get_vec3(j, path, "frequency", l.frequency);
    l.phase = get_vec3(j, path, "phase", l.phase);
    l.center = get_vec3(j, path, "center", l.center);
    return l;
  }
  cfg_fail(path + ".type", "unknown trajectory type '" + type + "'");
}

SimConfig parse_sim(const json& j, const std::string& path) {
  check_keys(j, path,
             {"seed", "duration", "odom_rate", "range_rate", "anchors", "trajectory",
              "noise", "nlos", "dropouts", "map_frame_offset"});
  SimConfig c;
  if (const json* seed = find(j, "seed")) {
    if (!seed->is_number_integer() ||
        (seed->is_number_integer() && !seed->is_number_unsigned() &&
         seed->get<long long>() < 0)) {
      cfg_fail(path + ".seed", "expected a non-negative integer");
    }
    c.seed = seed->get<std::uint64_t>();
  }
  c.duration = get_number(j, path, "duration", c.duration);
  c.odom_rate = get_number(j, path, "odom_rate", c.odom_rate);
  c.range_rate = get_number(j, path, "range_rate", c.range_rate);
  if (const json* anchors = find(j, "anchors")) {
    c.anchors_truth = parse_anchor_list(*anchors, path + ".anchors", false);
  }
  if (const json* traj = find(j, "trajectory")) {
    c.trajectory = parse_trajectory(*traj, path + ".trajectory");
  }
  if (const json* noise = find(j, "noise")) {
    const std::string np = path + ".noise";
    check_keys(*noise, np,
               {"sigma_range", "odom_rot_noise", "odom_trans_noise", "odom_drift_rate"});
    c.noise.sigma_range = get_number(*noise, np, "sigma_range", c.noise.sigma_range);
    c.noise.odom_rot_noise = get_number(*noise, np, "odom_rot_noise", c.noise.odom_rot_noise);
    c.noise.odom_trans_noise =
        get_number(*noise, np, "odom_trans_noise", c.noise.odom_trans_noise);
    c.noise.odom_drift_rate =
        get_number(*noise, np, "odom_drift_rate", c.noise.odom_drift_rate);
  }
  if (const json* nlos = find(j, "nlos")) {
    const std::string np = path + ".nlos";
    check_keys(*nlos, np, {"probability", "bias_min", "bias_max"});
    c.nlos.probability = get_number(*nlos, np, "probability", c.nlos.probability);
    c.nlos.bias_min = get_number(*nlos, np, "bias_min", c.nlos.bias_min);
    c.nlos.bias_max = get_number(*nlos, np, "bias_max", c.nlos.bias_max);
  }
  if (const json* drops = find(j, "dropouts")) {
    const std::string dp = path + ".dropouts";
    if (!drops->is_array()) cfg_fail(dp, "expected an array");
    for (std::size_t i = 0; i < drops->size(); ++i) {
      const std::string ip = dp + "[" + std::to_string(i) + "]";
      const json& d = (*drops)[i];
      check_keys(d, ip, {"sensor", "start", "end"});
      Dropout out;
      const std::string sensor = require_string(d, ip, "sensor");
      if (sensor == "uwb") {
        out.sensor = Dropout::Sensor::Uwb;
      } else if (sensor == "odom") {
        out.sensor = Dropout::Sensor::Odom;
      } else {
        cfg_fail(ip + ".sensor", "expected 'uwb' or 'odom'");
      }
      out.start = get_number(d, ip, "start", 0.0);
      out.end = get_number(d, ip, "end", 0.0);
      c.dropouts.push_back(out);
    }
  }
  if (const json* offset = find(j, "map_frame_offset")) {
    c.map_frame_offset = parse_pose(*offset, path + ".map_frame_offset");
  }
  return c;
}

PipelineOptions parse_pipeline(const json& j, const std::string& path,
                               const PipelineOptions& def) {
  check_keys(j, path,
             {"resolve_every", "recalib_every", "init_pairs", "fix_window",
              "assoc_tolerance", "max_window_poses", "warmup_translation",
              "warmup_rotation_deg", "warmup_solves", "feedback_anchors", "uwb_loss",
              "transform_loss", "range_loss", "weights"});
  PipelineOptions o = def;
  o.resolve_every = get_int(j, path, "resolve_every", o.resolve_every);
  o.recalib_every = get_int(j, path, "recalib_every", o.recalib_every);
  o.init_pairs = get_int(j, path, "init_pairs", o.init_pairs);
  o.fix_window = get_number(j, path, "fix_window", o.fix_window);
  o.assoc_tolerance = get_number(j, path, "assoc_tolerance", o.assoc_tolerance);
  o.max_window_poses = get_int(j, path, "max_window_poses", o.max_window_poses);
  o.warmup_translation = get_number(j, path, "warmup_translation", o.warmup_translation);
  o.warmup_rotation_deg =
      get_number(j, path, "warmup_rotation_deg", o.warmup_rotation_deg);
  o.warmup_solves = get_int(j, path, "warmup_solves", o.warmup_solves);
  o.feedback_anchors = get_bool(j, path, "feedback_anchors", o.feedback_anchors);
  if (const json* l = find(j, "uwb_loss")) o.uwb_loss = parse_loss(*l, path + ".uwb_loss", o.uwb_loss);
  if (const json* l = find(j, "transform_loss")) {
    o.transform_loss = parse_loss(*l, path + ".transform_loss", o.transform_loss);
  }
  if (const json* l = find(j, "range_loss")) {
    o.range_loss = parse_loss(*l, path + ".range_loss", o.range_loss);
  }
  if (const json* w = find(j, "weights")) {
    const std::string wp = path + ".weights";
    check_keys(*w, wp, {"odometry", "uwb", "transform", "range"});
    o.odom_weight = get_number(*w, wp, "odometry", o.odom_weight);
    o.uwb_weight = get_number(*w, wp, "uwb", o.uwb_weight);
    o.transform_weight = get_number(*w, wp, "transform", o.transform_weight);
    o.range_weight = get_number(*w, wp, "range", o.range_weight);
  }
  return o;
}

// ---- canonical serialization ----------------------------------------------

json vec3_to_json(const Vector3& v) {
  return json::array({v.x(), v.y(), v.z()});
}

json pose_to_json(const Pose& p) {
  const auto& q = p.rotation.quaternion();
  json out;
  out["translation"] = vec3_to_json(p.translation);
  out["quaternion"] = {{"w", q.w()}, {"x", q.x()}, {"y", q.y()}, {"z", q.z()}};
  return out;
}

json loss_to_json(const Loss& l) {
  if (l.kind == Loss::Kind::Identity) return json{{"type", "identity"}};
  return json{{"type", "huber"}, {"delta", l.delta}};
}

json solver_to_json(const SolverOptions& o) {
  json out;
  out["max_iterations"] = o.max_iterations;
  out["initial_lambda"] = o.initial_lambda;
  out["lambda_up"] = o.lambda_up;
  out["lambda_down"] = o.lambda_down;
  out["relative_cost_tolerance"] = o.relative_cost_tolerance;
  out["parameter_tolerance"] = o.parameter_tolerance;
  out["absolute_cost_tolerance"] = o.absolute_cost_tolerance;
  out["jacobian_mode"] = o.jacobian_mode == JacobianMode::Numeric
                             ? "numeric"
                             : "analytic_if_available";
  return out;
}

json trajectory_to_json(const TrajectoryConfig& t) {
  json out;
  if (const auto* w = std::get_if<WaypointTrajectory>(&t)) {
    out["type"] = "waypoints";
    json pts = json::array();
    for (const auto& p : w->waypoints) pts.push_back(vec3_to_json(p));
    out["waypoints"] = std::move(pts);
    out["speed"] = w->speed;
    out["corner_radius"] = w->corner_radius;
  } else {
    const auto& l = std::get<LissajousTrajectory>(t);
    out["type"] = "lissajous";
    out["amplitude"] = vec3_to_json(l.amplitude);
    out["frequency"] = vec3_to_json(l.frequency);
    out["phase"] = vec3_to_json(l.phase);
    out["center"] = vec3_to_json(l.center);
  }
  return out;
}

json anchors_to_json(const AnchorMap& map, bool with_fixed) {
  json out = json::array();
  for (const auto& a : map) {
    json e;
    e["id"] = a.id;
    e["position"] = vec3_to_json(a.position);
    if (with_fixed) e["fixed"] = {a.fixed[0], a.fixed[1], a.fixed[2]};
    out.push_back(std::move(e));
  }
  return out;
}

// ---- text-file plumbing ----------------------------------------------------

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  return out;
}

void finish_out(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError(path.string() + ": write failed");
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_number(const std::string& token, const fs::path& path, std::size_t line_no) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                    token + "'");
  }
  return v;
}

[[noreturn]] void data_fail(const fs::path& path, std::size_t line_no,
                            const std::string& msg) {
  throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
}

void require_header(const std::vector<std::string>& lines, const fs::path& path,
                    const std::string& expected) {
  if (lines.empty()) data_fail(path, 1, "empty file, expected header '" + expected + "'");
  if (lines[0] != expected) {
    data_fail(path, 1, "expected header '" + expected + "', got '" + lines[0] + "'");
  }
}

Rotation3 quaternion_from_fields(double qx, double qy, double qz, double qw,
                                 const fs::path& path, std::size_t line_no) {
  const double norm = std::sqrt(qx * qx + qy * qy + qz * qz + qw * qw);
  if (!(norm > 1e-6)) data_fail(path, line_no, "quaternion norm too small");
  return Rotation3(qw, qx, qy, qz);
}

void write_pose_fields(std::ofstream& out, const TimedPose& p, char sep) {
  const auto& q = p.pose.rotation.quaternion();
  out << format_double(p.t) << sep << format_double(p.pose.translation.x()) << sep
      << format_double(p.pose.translation.y()) << sep
      << format_double(p.pose.translation.z()) << sep << format_double(q.x()) << sep
      << format_double(q.y()) << sep << format_double(q.z()) << sep
      << format_double(q.w()) << '\n';
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.sim = reference_sim_config();
  // Rough initial anchor guesses; first anchor is the origin, the third pins
  // the x axis, heights are known from the tripods.
  c.gauge.add("A1", Vector3(0.0, 0.0, 2.08), {true, true, true});
  c.gauge.add("A2", Vector3(0.12, 2.93, 0.98), {false, false, true});
  c.gauge.add("A3", Vector3(4.12, 0.0, 0.78), {false, true, true});
  c.gauge.add("A4", Vector3(4.32, 3.02, 0.30), {false, false, true});
  c.pipeline.max_window_poses = 100;  // bounds the per-solve cost at 10 Hz
  // Odometry steps are far quieter than UWB fixes (mm-level step noise vs
  // cm-level fixes); weight the chain accordingly, tempered because drift
  // is correlated rather than white.
  c.pipeline.odom_weight = 10.0;
  return c;
}

RunConfig parse_config(const std::string& text, const std::string& source_name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  check_keys(j, source_name, {"sim", "gauge", "solver", "pipeline", "output_dir"});
  RunConfig c;
  bool has_sim = false;
  if (const json* sim = find(j, "sim")) {
    c.sim = parse_sim(*sim, source_name + ": sim");
    has_sim = true;
  }
  if (const json* gauge = find(j, "gauge")) {
    const std::string gp = source_name + ": gauge";
    check_keys(*gauge, gp, {"anchors"});
    if (const json* anchors = find(*gauge, "anchors")) {
      c.gauge = parse_anchor_list(*anchors, gp + ".anchors", true);
    }
  }
  if (const json* solver = find(j, "solver")) {
    const std::string sp = source_name + ": solver";
    check_keys(*solver, sp, {"fusion", "calibration"});
    if (const json* f = find(*solver, "fusion")) {
      c.pipeline.fusion_solver = parse_solver(*f, sp + ".fusion", c.pipeline.fusion_solver);
    }
    if (const json* cal = find(*solver, "calibration")) {
      c.pipeline.calibration_solver =
          parse_solver(*cal, sp + ".calibration", c.pipeline.calibration_solver);
    }
  }
  if (const json* pipeline = find(j, "pipeline")) {
    c.pipeline = parse_pipeline(*pipeline, source_name + ": pipeline", c.pipeline);
  }
  if (const json* out = find(j, "output_dir")) {
    if (!out->is_string()) cfg_fail(source_name + ": output_dir", "expected a string");
    c.output_dir = out->get<std::string>();
  }
  if (has_sim) validate(c.sim);
  validate(c.pipeline);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.filename().string());
}

std::string serialize_config(const RunConfig& config) {
  json j;
  json sim;
  sim["seed"] = config.sim.seed;
  sim["duration"] = config.sim.duration;
  sim["odom_rate"] = config.sim.odom_rate;
  sim["range_rate"] = config.sim.range_rate;
  sim["anchors"] = anchors_to_json(config.sim.anchors_truth, false);
  sim["trajectory"] = trajectory_to_json(config.sim.trajectory);
  sim["noise"] = {{"sigma_range", config.sim.noise.sigma_range},
                  {"odom_rot_noise", config.sim.noise.odom_rot_noise},
                  {"odom_trans_noise", config.sim.noise.odom_trans_noise},
                  {"odom_drift_rate", config.sim.noise.odom_drift_rate}};
  sim["nlos"] = {{"probability", config.sim.nlos.probability},
                 {"bias_min", config.sim.nlos.bias_min},
                 {"bias_max", config.sim.nlos.bias_max}};
  json drops = json::array();
  for (const auto& d : config.sim.dropouts) {
    drops.push_back({{"sensor", d.sensor == Dropout::Sensor::Uwb ? "uwb" : "odom"},
                     {"start", d.start},
                     {"end", d.end}});
  }
  sim["dropouts"] = std::move(drops);
  sim["map_frame_offset"] = pose_to_json(config.sim.map_frame_offset);
  j["sim"] = std::move(sim);
  j["gauge"] = {{"anchors", anchors_to_json(config.gauge, true)}};
  j["solver"] = {{"fusion", solver_to_json(config.pipeline.fusion_solver)},
                 {"calibration", solver_to_json(config.pipeline.calibration_solver)}};
  json pipe;
  pipe["resolve_every"] = config.pipeline.resolve_every;
  pipe["recalib_every"] = config.pipeline.recalib_every;
  pipe["init_pairs"] = config.pipeline.init_pairs;
  pipe["fix_window"] = config.pipeline.fix_window;
  pipe["assoc_tolerance"] = config.pipeline.assoc_tolerance;
  pipe["max_window_poses"] = config.pipeline.max_window_poses;
  pipe["warmup_translation"] = config.pipeline.warmup_translation;
  pipe["warmup_rotation_deg"] = config.pipeline.warmup_rotation_deg;
  pipe["warmup_solves"] = config.pipeline.warmup_solves;
  pipe["feedback_anchors"] = config.pipeline.feedback_anchors;
  pipe["uwb_loss"] = loss_to_json(config.pipeline.uwb_loss);
  pipe["transform_loss"] = loss_to_json(config.pipeline.transform_loss);
  pipe["range_loss"] = loss_to_json(config.pipeline.range_loss);
  pipe["weights"] = {{"odometry", config.pipeline.odom_weight},
                     {"uwb", config.pipeline.uwb_weight},
                     {"transform", config.pipeline.transform_weight},
                     {"range", config.pipeline.range_weight}};
  j["pipeline"] = std::move(pipe);
  j["output_dir"] = config.output_dir;
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const RunConfig& config) {
  return fnv1a64(serialize_config(config));
}

// ---- trajectories ----------------------------------------------------------

static const std::string kPoseHeader = "t,x,y,z,qx,qy,qz,qw";

long write_trajectory_csv(const fs::path& path, const std::vector<TimedPose>& poses) {
  auto out = open_out(path);
  out << kPoseHeader << '\n';
  for (const auto& p : poses) write_pose_fields(out, p, ',');
  finish_out(out, path);
  return static_cast<long>(poses.size());
}

std::vector<TimedPose> read_trajectory_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  require_header(lines, path, kPoseHeader);
  std::vector<TimedPose> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != 8) data_fail(path, i + 1, "expected 8 fields");
    double v[8];
    for (int k = 0; k < 8; ++k) v[k] = parse_number(fields[k], path, i + 1);
    TimedPose p;
    p.t = v[0];
    p.pose.translation = Vector3(v[1], v[2], v[3]);
    p.pose.rotation = quaternion_from_fields(v[4], v[5], v[6], v[7], path, i + 1);
    out.push_back(p);
  }
  return out;
}

static const std::string kRangeHeader = "t,anchor_id,range_m";

long write_ranges_csv(const fs::path& path, const std::vector<RangeMeasurement>& ranges) {
  auto out = open_out(path);
  out << kRangeHeader << '\n';
  for (const auto& r : ranges) {
    out << format_double(r.t) << ',' << r.anchor_id << ',' << format_double(r.range)
        << '\n';
  }
  finish_out(out, path);
  return static_cast<long>(ranges.size());
}

std::vector<RangeMeasurement> read_ranges_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  require_header(lines, path, kRangeHeader);
  std::vector<RangeMeasurement> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != 3) data_fail(path, i + 1, "expected 3 fields");
    if (fields[1].empty()) data_fail(path, i + 1, "empty anchor id");
    RangeMeasurement m;
    m.t = parse_number(fields[0], path, i + 1);
    m.anchor_id = fields[1];
    m.range = parse_number(fields[2], path, i + 1);
    out.push_back(std::move(m));
  }
  return out;
}

long write_trajectory_tum(const fs::path& path, const std::vector<TimedPose>& poses) {
  auto out = open_out(path);
  for (const auto& p : poses) write_pose_fields(out, p, ' ');
  finish_out(out, path);
  return static_cast<long>(poses.size());
}

std::vector<TimedPose> read_trajectory_tum(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<TimedPose> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i][0] == '#') continue;
    std::istringstream iss(lines[i]);
    std::vector<std::string> fields;
    std::string tok;
    while (iss >> tok) fields.push_back(tok);
    if (fields.size() != 8) data_fail(path, i + 1, "expected 8 whitespace-separated fields");
    double v[8];
    for (int k = 0; k < 8; ++k) v[k] = parse_number(fields[k], path, i + 1);
    TimedPose p;
    p.t = v[0];
    p.pose.translation = Vector3(v[1], v[2], v[3]);
    p.pose.rotation = quaternion_from_fields(v[4], v[5], v[6], v[7], path, i + 1);
    out.push_back(p);
  }
  return out;
}

// ---- anchors & matrices ----------------------------------------------------

static const std::string kAnchorHeader = "anchor_id,x,y,z,fixed_x,fixed_y,fixed_z";

long write_anchors_csv(const fs::path& path, const AnchorMap& anchors) {
  auto out = open_out(path);
  out << kAnchorHeader << '\n';
  for (const auto& a : anchors) {
    out << a.id << ',' << format_double(a.position.x()) << ','
        << format_double(a.position.y()) << ',' << format_double(a.position.z()) << ','
        << (a.fixed[0] ? '1' : '0') << ',' << (a.fixed[1] ? '1' : '0') << ','
        << (a.fixed[2] ? '1' : '0') << '\n';
  }
  finish_out(out, path);
  return static_cast<long>(anchors.size());
}

AnchorMap read_anchors_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  require_header(lines, path, kAnchorHeader);
  AnchorMap map;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != 7) data_fail(path, i + 1, "expected 7 fields");
    if (fields[0].empty()) data_fail(path, i + 1, "empty anchor id");
    Vector3 pos;
    for (int k = 0; k < 3; ++k) pos(k) = parse_number(fields[k + 1], path, i + 1);
    std::array<bool, 3> fixed{};
    for (int k = 0; k < 3; ++k) {
      const std::string& f = fields[k + 4];
      if (f != "0" && f != "1") data_fail(path, i + 1, "fixed flags must be 0 or 1");
      fixed[static_cast<std::size_t>(k)] = f == "1";
    }
    try {
      map.add(fields[0], pos, fixed);
    } catch (const std::invalid_argument& e) {
      data_fail(path, i + 1, e.what());
    }
  }
  return map;
}

Eigen::MatrixXd read_range_matrix(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i][0] == '#') continue;
    std::istringstream iss(lines[i]);
    std::vector<double> row;
    std::string tok;
    while (iss >> tok) row.push_back(parse_number(tok, path, i + 1));
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": empty range matrix");
  const std::size_t n = rows.size();
  Eigen::MatrixXd m(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    if (rows[r].size() != n) {
      throw DataError(path.string() + ": matrix is not square (" + std::to_string(n) +
                      " rows, row " + std::to_string(r + 1) + " has " +
                      std::to_string(rows[r].size()) + " entries)");
    }
    for (std::size_t c = 0; c < n; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

long write_range_matrix(const fs::path& path, const Eigen::MatrixXd& m) {
  auto out = open_out(path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ' ';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
  finish_out(out, path);
  return static_cast<long>(m.rows());
}

// ---- traces ----------------------------------------------------------------

long write_anchor_trace_csv(const fs::path& path,
                            const std::vector<std::string>& scalar_names,
                            const std::vector<AnchorTraceRow>& trace) {
  auto out = open_out(path);
  out << "n_ranges";
  for (const auto& n : scalar_names) out << ',' << n;
  out << '\n';
  for (const auto& row : trace) {
    if (row.scalars.size() != scalar_names.size()) {
      throw std::invalid_argument("anchor trace row width does not match scalar names");
    }
    out << row.n_ranges;
    for (const double s : row.scalars) out << ',' << format_double(s);
    out << '\n';
  }
  finish_out(out, path);
  return static_cast<long>(trace.size());
}

long write_tum_trace_csv(const fs::path& path, const std::vector<TumSample>& trace) {
  auto out = open_out(path);
  out << "t,n_poses,x,y,z,qx,qy,qz,qw\n";
  for (const auto& s : trace) {
    const auto& q = s.t_um.rotation.quaternion();
    out << format_double(s.t) << ',' << s.n_poses << ','
        << format_double(s.t_um.translation.x()) << ','
        << format_double(s.t_um.translation.y()) << ','
        << format_double(s.t_um.translation.z()) << ',' << format_double(q.x()) << ','
        << format_double(q.y()) << ',' << format_double(q.z()) << ','
        << format_double(q.w()) << '\n';
  }
  finish_out(out, path);
  return static_cast<long>(trace.size());
}

long write_trajectory_errors_csv(const fs::path& path,
                                 const TrajectoryErrorReport& report) {
  auto out = open_out(path);
  out << "t,error_m\n";
  for (std::size_t i = 0; i < report.errors.size(); ++i) {
    out << format_double(report.times[i]) << ',' << format_double(report.errors[i])
        << '\n';
  }
  finish_out(out, path);
  return static_cast<long>(report.errors.size());
}

// ---- datasets ---------------------------------------------------------------

void write_dataset(const fs::path& dir, const SimDataset& dataset) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
  write_trajectory_csv(dir / "odometry.csv", dataset.odometry);
  write_ranges_csv(dir / "ranges.csv", dataset.ranges);
  write_trajectory_csv(dir / "ground_truth.csv", dataset.ground_truth);
}

SimDataset read_dataset(const fs::path& dir) {
  SimDataset ds;
  ds.odometry = read_trajectory_csv(dir / "odometry.csv");
  ds.ranges = read_ranges_csv(dir / "ranges.csv");
  if (fs::exists(dir / "ground_truth.csv")) {
    ds.ground_truth = read_trajectory_csv(dir / "ground_truth.csv");
  }
  return ds;
}

// ---- reports ----------------------------------------------------------------

std::string to_text(const TrajectoryErrorReport& report, const std::string& label) {
  std::ostringstream out;
  out << "[trajectory." << label << "]\n";
  out << "pairs = " << report.pairs << '\n';
  out << "rmse_m = " << format_double(report.rmse) << '\n';
  out << "max_m = " << format_double(report.max) << '\n';
  out << "min_m = " << format_double(report.min) << '\n';
  out << "alignment_translation_m = " << format_double(report.alignment.translation.x())
      << ' ' << format_double(report.alignment.translation.y()) << ' '
      << format_double(report.alignment.translation.z()) << '\n';
  out << "alignment_rotation_deg = "
      << format_double(report.alignment.rotation.angle() * 180.0 / std::numbers::pi)
      << '\n';
  return out.str();
}

std::string to_text(const AnchorErrorReport& report, const std::string& label) {
  std::ostringstream out;
  out << "[anchors." << label << "]\n";
  out << "n_scalars = " << report.scalars.size() << '\n';
  for (const auto& s : report.scalars) {
    out << s.name << ".estimate = " << format_double(s.estimate) << '\n';
    out << s.name << ".reference = " << format_double(s.reference) << '\n';
    out << s.name << ".error_m = " << format_double(s.error) << '\n';
  }
  out << "rmse_m = " << format_double(report.rmse) << '\n';
  return out.str();
}

std::string to_text(const SolverReport& report, const std::string& label) {
  std::ostringstream out;
  out << "[solver." << label << "]\n";
  out << "status = " << to_string(report.status) << '\n';
  out << "iterations = " << report.iterations << '\n';
  out << "initial_cost = " << format_double(report.initial_cost) << '\n';
  out << "final_cost = " << format_double(report.final_cost) << '\n';
  if (!report.failure_reason.empty()) {
    out << "failure_reason = " << report.failure_reason << '\n';
  }
  return out.str();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish_out(out, path);
}

void write_manifest(const fs::path& path, const std::string& command,
                    const RunConfig& config,
                    const std::vector<std::pair<std::string, long>>& files) {
  json m;
  m["command"] = command;
  m["seed"] = config.sim.seed;
  char hex[19];
  std::snprintf(hex, sizeof hex, "0x%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  m["config_hash"] = hex;
  json f;
  for (const auto& [name, rows] : files) f[name] = rows;
  m["files"] = std::move(f);
  write_text(path, m.dump(2) + "\n");
}

}  // namespace uwbfgo
