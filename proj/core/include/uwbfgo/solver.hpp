#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "uwbfgo/geometry.hpp"

namespace uwbfgo {

/// Robust loss applied to the squared residual norm s = |r|^2.
/// Huber: rho(s) = s for s <= delta^2, else 2*delta*sqrt(s) - delta^2,
/// with delta expressed in residual-norm units (meters for our factors).
struct Loss {
  enum class Kind { Identity, Huber };

  Kind kind = Kind::Identity;
  double delta = 1.0;

  static Loss identity() { return Loss{Kind::Identity, 1.0}; }
  static Loss huber(double delta) { return Loss{Kind::Huber, delta}; }

  double rho(double s) const;
  double rho_prime(double s) const;
};

enum class VariableKind { PoseSE3, Point3 };

/// Estimate held by a variable block. PoseSE3 variables are updated
/// right-multiplicatively: T <- T * se3_exp(step).
using Value = std::variant<Pose, Vector3>;

inline const Pose& as_pose(const Value& v) { return std::get<Pose>(v); }
inline const Vector3& as_point(const Value& v) { return std::get<Vector3>(v); }

struct VariableId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool operator==(const VariableId&) const = default;
};

/// Residual function: maps the referenced variable values (in block order)
/// to a residual vector. Must be deterministic and side-effect free.
using ResidualFn = std::function<Eigen::VectorXd(std::span<const Value>)>;

/// Optional analytic Jacobian: fills one residual_dim x tangent_dim matrix
/// per referenced variable, evaluated at the given values.
using JacobianFn =
    std::function<void(std::span<const Value>, std::span<Eigen::MatrixXd>)>;

enum class JacobianMode { Numeric, AnalyticIfAvailable };

struct SolverOptions {
  int max_iterations = 50;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double relative_cost_tolerance = 1e-9;
  double parameter_tolerance = 1e-10;
  // Costs at or below this are treated as an exact fit; lets consistent
  // (noise-free, quadratic) problems terminate instead of polishing zeros.
  double absolute_cost_tolerance = 1e-15;
  JacobianMode jacobian_mode = JacobianMode::AnalyticIfAvailable;
};

struct SolverReport {
  enum class Status { Converged, MaxIterations, Failure };

  Status status = Status::Failure;
  std::string failure_reason;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted LM steps
  std::vector<double> cost_trace;  // initial cost followed by accepted costs

  bool converged() const { return status == Status::Converged; }
};

const char* to_string(SolverReport::Status status);

/// Nonlinear least-squares problem over manifold variable blocks:
///   min 0.5 * sum_b rho_b(|w_b r_b(x)|^2)
/// Variables carry per-tangent-scalar fixed masks; fixed scalars are
/// excluded from the update and stay bit-identical across solves.
class Problem {
 public:
  /// Pose tangent mask order matches se3 tangent layout:
  /// indices 0..2 rotation (x,y,z axes), 3..5 translation.
  VariableId add_pose(const Pose& initial,
                      const std::array<bool, 6>& fixed = {false, false, false,
                                                          false, false, false});
  VariableId add_point(const Vector3& initial,
                       const std::array<bool, 3>& fixed = {false, false, false});

  /// Generic entry point. Ambient layout: Point3 (x, y, z); PoseSE3
  /// (x, y, z, qx, qy, qz, qw). Throws std::invalid_argument on non-finite
  /// input or a quaternion off unit norm by more than 1e-6.
  VariableId add_variable(VariableKind kind, const Eigen::VectorXd& ambient,
                          const std::vector<bool>& fixed);

  void add_residual(std::vector<VariableId> variables, int residual_dim,
                    ResidualFn fn, Loss loss = Loss::identity(),
                    double weight = 1.0, std::string name = {},
                    JacobianFn analytic = nullptr);

  std::size_t num_variables() const { return variables_.size(); }
  std::size_t num_residual_blocks() const { return blocks_.size(); }

  const Value& value(VariableId id) const;
  void set_value(VariableId id, const Value& v);
  const Pose& pose(VariableId id) const { return as_pose(value(id)); }
  const Vector3& point(VariableId id) const { return as_point(value(id)); }

  VariableKind kind(VariableId id) const;
  int tangent_dim(VariableId id) const;
  const std::vector<bool>& fixed_mask(VariableId id) const;
  void set_fixed_mask(VariableId id, const std::vector<bool>& fixed);

  /// Total cost 0.5 * sum rho(|w r|^2) at the current values.
  double cost() const;

 private:
  friend SolverReport solve(Problem&, const SolverOptions&);

  struct Variable {
    VariableKind kind;
    Value value;
    std::vector<bool> fixed;
  };

  struct ResidualBlock {
    std::vector<VariableId> variables;
    int dim = 0;
    ResidualFn fn;
    Loss loss;
    double weight = 1.0;
    std::string name;
    JacobianFn analytic;
  };

  std::vector<Variable> variables_;
  std::vector<ResidualBlock> blocks_;
};

SolverReport solve(Problem& problem, const SolverOptions& options = {});

/// Central-difference Jacobian of `fn` with respect to the tangent space of
/// variables[block_index]; poses are perturbed via right-multiplied se3_exp.
/// Throws std::runtime_error naming the block on non-finite entries.
Eigen::MatrixXd numeric_jacobian(const ResidualFn& fn,
                                 std::span<const Value> variables,
                                 std::size_t block_index, double step = 1e-6);

/// IRLS-style robust scaling: with s = |r|^2, scales the residual and every
/// Jacobian by sqrt(rho'(s)). Identity loss is a no-op.
void apply_robust_loss(const Loss& loss, Eigen::VectorXd& residual,
                       std::span<Eigen::MatrixXd> jacobians);

int tangent_dimension(VariableKind kind);

}  // namespace uwbfgo
