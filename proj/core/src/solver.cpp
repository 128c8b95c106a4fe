#include "uwbfgo/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace uwbfgo {

namespace {
constexpr double kLambdaMax = 1e12;
constexpr double kLambdaMin = 1e-12;
constexpr double kDiagonalFloor = 1e-12;
}  // namespace

double Loss::rho(double s) const {
  switch (kind) {
    case Kind::Identity:
      return s;
    case Kind::Huber: {
      const double d2 = delta * delta;
      if (s <= d2) return s;
      return 2.0 * delta * std::sqrt(s) - d2;
    }
  }
  return s;
}

double Loss::rho_prime(double s) const {
  switch (kind) {
    case Kind::Identity:
      return 1.0;
    case Kind::Huber: {
      const double d2 = delta * delta;
      if (s <= d2) return 1.0;
      return delta / std::sqrt(s);
    }
  }
  return 1.0;
}

const char* to_string(SolverReport::Status status) {
  switch (status) {
    case SolverReport::Status::Converged: return "converged";
    case SolverReport::Status::MaxIterations: return "max_iterations";
    case SolverReport::Status::Failure: return "failure";
  }
  return "unknown";
}

int tangent_dimension(VariableKind kind) {
  return kind == VariableKind::PoseSE3 ? 6 : 3;
}

VariableId Problem::add_pose(const Pose& initial, const std::array<bool, 6>& fixed) {
  Variable v;
  v.kind = VariableKind::PoseSE3;
  v.value = initial;
  v.fixed.assign(fixed.begin(), fixed.end());
  variables_.push_back(std::move(v));
  return VariableId{variables_.size() - 1};
}

VariableId Problem::add_point(const Vector3& initial, const std::array<bool, 3>& fixed) {
  Variable v;
  v.kind = VariableKind::Point3;
  v.value = initial;
  v.fixed.assign(fixed.begin(), fixed.end());
  variables_.push_back(std::move(v));
  return VariableId{variables_.size() - 1};
}

VariableId Problem::add_variable(VariableKind kind, const Eigen::VectorXd& ambient,
                                 const std::vector<bool>& fixed) {
  if (!ambient.allFinite()) {
    throw std::invalid_argument("add_variable: non-finite initial value");
  }
  if (static_cast<int>(fixed.size()) != tangent_dimension(kind)) {
    throw std::invalid_argument("add_variable: fixed mask size does not match tangent dimension");
  }
  if (kind == VariableKind::Point3) {
    if (ambient.size() != 3) throw std::invalid_argument("add_variable: Point3 expects 3 ambient scalars");
    std::array<bool, 3> mask{fixed[0], fixed[1], fixed[2]};
    return add_point(ambient, mask);
  }
  if (ambient.size() != 7) throw std::invalid_argument("add_variable: PoseSE3 expects 7 ambient scalars");
  const Eigen::Quaterniond q(ambient[6], ambient[3], ambient[4], ambient[5]);
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument("add_variable: quaternion norm deviates from 1 by more than 1e-6");
  }
  std::array<bool, 6> mask;
  std::copy(fixed.begin(), fixed.end(), mask.begin());
  return add_pose(Pose(Rotation3(q), ambient.head<3>()), mask);
}

void Problem::add_residual(std::vector<VariableId> variables, int residual_dim,
                           ResidualFn fn, Loss loss, double weight,
                           std::string name, JacobianFn analytic) {
  if (residual_dim <= 0) throw std::invalid_argument("add_residual: residual_dim must be positive");
  if (weight <= 0.0) throw std::invalid_argument("add_residual: weight must be positive");
  for (const VariableId id : variables) {
    if (id.index >= variables_.size()) {
      throw std::invalid_argument("add_residual: unknown variable id");
    }
  }
  ResidualBlock block;
  block.variables = std::move(variables);
  block.dim = residual_dim;
  block.fn = std::move(fn);
  block.loss = loss;
  block.weight = weight;
  block.name = std::move(name);
  block.analytic = std::move(analytic);
  blocks_.push_back(std::move(block));
}

const Value& Problem::value(VariableId id) const { return variables_.at(id.index).value; }

void Problem::set_value(VariableId id, const Value& v) {
  if (v.index() != variables_.at(id.index).value.index()) {
    throw std::invalid_argument("set_value: kind mismatch");
  }
  variables_[id.index].value = v;
}

VariableKind Problem::kind(VariableId id) const { return variables_.at(id.index).kind; }

int Problem::tangent_dim(VariableId id) const {
  return tangent_dimension(variables_.at(id.index).kind);
}

const std::vector<bool>& Problem::fixed_mask(VariableId id) const {
  return variables_.at(id.index).fixed;
}

void Problem::set_fixed_mask(VariableId id, const std::vector<bool>& fixed) {
  if (static_cast<int>(fixed.size()) != tangent_dim(id)) {
    throw std::invalid_argument("set_fixed_mask: mask size does not match tangent dimension");
  }
  variables_[id.index].fixed = fixed;
}

double Problem::cost() const {
  double total = 0.0;
  std::vector<Value> scratch;
  for (const auto& block : blocks_) {
    scratch.clear();
    for (const VariableId id : block.variables) scratch.push_back(variables_[id.index].value);
    const Eigen::VectorXd r = block.fn(std::span<const Value>(scratch.data(), scratch.size()));
    const double s = block.weight * block.weight * r.squaredNorm();
    total += 0.5 * block.loss.rho(s);
  }
  return total;
}

void apply_robust_loss(const Loss& loss, Eigen::VectorXd& residual,
                       std::span<Eigen::MatrixXd> jacobians) {
  if (loss.kind == Loss::Kind::Identity) return;
  const double s = residual.squaredNorm();
  const double scale = std::sqrt(loss.rho_prime(s));
  if (scale == 1.0) return;
  residual *= scale;
  for (auto& j : jacobians) j *= scale;
}

Eigen::MatrixXd numeric_jacobian(const ResidualFn& fn,
                                 std::span<const Value> variables,
                                 std::size_t block_index, double step) {
  if (block_index >= variables.size()) {
    throw std::invalid_argument("numeric_jacobian: block index out of range");
  }
  std::vector<Value> work(variables.begin(), variables.end());
  const Value& v = variables[block_index];
  const bool is_pose = std::holds_alternative<Pose>(v);
  const int dim = is_pose ? 6 : 3;

  Eigen::MatrixXd jac;
  for (int i = 0; i < dim; ++i) {
    auto perturb = [&](double h) {
      if (is_pose) {
        Vector6 t = Vector6::Zero();
        t[i] = h;
        work[block_index] = compose(as_pose(v), se3_exp(t));
      } else {
        Vector3 p = as_point(v);
        p[i] += h;
        work[block_index] = p;
      }
      return fn(std::span<const Value>(work.data(), work.size()));
    };
    const Eigen::VectorXd plus = perturb(step);
    const Eigen::VectorXd minus = perturb(-step);
    work[block_index] = v;
    if (jac.size() == 0) jac.resize(plus.size(), dim);
    jac.col(i) = (plus - minus) / (2.0 * step);
  }
  if (!jac.allFinite()) {
    throw std::runtime_error("numeric_jacobian: non-finite entries for block " +
                             std::to_string(block_index));
  }
  return jac;
}

namespace {

struct BlockEval {
  Eigen::VectorXd residual;                 // weighted, robust-scaled
  std::vector<Eigen::MatrixXd> jacobians;   // one per variable, free+fixed cols
};

Value apply_step(const Value& v, const Eigen::Ref<const Eigen::VectorXd>& step) {
  if (std::holds_alternative<Pose>(v)) {
    Vector6 t = step;
    return compose(as_pose(v), se3_exp(t));
  }
  return Value(Vector3(as_point(v) + Vector3(step)));
}

}  // namespace

SolverReport solve(Problem& problem, const SolverOptions& options) {
  auto& vars = problem.variables_;
  auto& blocks = problem.blocks_;

  // Column layout over free tangent scalars only.
  std::vector<int> var_offset(vars.size(), -1);
  std::vector<std::vector<int>> free_cols(vars.size());
  int num_free = 0;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const int dim = tangent_dimension(vars[i].kind);
    std::vector<int> cols(dim, -1);
    int local = 0;
    for (int d = 0; d < dim; ++d) {
      if (!vars[i].fixed[d]) cols[d] = local++;
    }
    if (local > 0) var_offset[i] = num_free;
    num_free += local;
    free_cols[i] = std::move(cols);
  }
  if (num_free == 0) {
    throw std::invalid_argument("solve: problem has no free tangent scalars");
  }

  std::vector<Value> values(vars.size());
  for (std::size_t i = 0; i < vars.size(); ++i) values[i] = vars[i].value;

  auto gather = [&](const std::vector<Value>& state, const std::vector<VariableId>& ids,
                    std::vector<Value>& scratch) -> std::span<const Value> {
    scratch.clear();
    for (const VariableId id : ids) scratch.push_back(state[id.index]);
    return std::span<const Value>(scratch.data(), scratch.size());
  };

  std::vector<Value> scratch;

  // Cost at `state`; returns block index of the first non-finite residual.
  auto evaluate_cost = [&](const std::vector<Value>& state, std::size_t* bad_block) -> double {
    double total = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const Eigen::VectorXd r = blocks[b].fn(gather(state, blocks[b].variables, scratch));
      if (!r.allFinite()) {
        if (bad_block) *bad_block = b;
        return std::numeric_limits<double>::quiet_NaN();
      }
      const double s = blocks[b].weight * blocks[b].weight * r.squaredNorm();
      total += 0.5 * blocks[b].loss.rho(s);
    }
    return total;
  };

  SolverReport report;
  auto fail = [&](std::string reason) {
    report.status = SolverReport::Status::Failure;
    report.failure_reason = std::move(reason);
    return report;
  };

  std::size_t bad_block = 0;
  double cost = evaluate_cost(values, &bad_block);
  if (std::isnan(cost)) {
    return fail("non-finite residual in block '" + blocks[bad_block].name + "' (index " +
                std::to_string(bad_block) + ")");
  }
  report.initial_cost = cost;
  report.cost_trace.push_back(cost);

  Eigen::MatrixXd hessian(num_free, num_free);
  Eigen::VectorXd gradient(num_free);

  auto linearize = [&]() -> bool {
    hessian.setZero();
    gradient.setZero();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& block = blocks[b];
      bool any_free = false;
      for (const VariableId id : block.variables) {
        if (var_offset[id.index] >= 0) { any_free = true; break; }
      }
      if (!any_free) continue;

      const auto local = gather(values, block.variables, scratch);
      BlockEval eval;
      eval.residual = block.fn(local);
      if (!eval.residual.allFinite()) return false;
      eval.jacobians.resize(block.variables.size());
      const bool use_analytic =
          block.analytic && options.jacobian_mode == JacobianMode::AnalyticIfAvailable;
      if (use_analytic) {
        block.analytic(local, std::span<Eigen::MatrixXd>(eval.jacobians));
      } else {
        for (std::size_t vi = 0; vi < block.variables.size(); ++vi) {
          eval.jacobians[vi] = numeric_jacobian(block.fn, local, vi);
        }
      }
      eval.residual *= block.weight;
      for (auto& j : eval.jacobians) j *= block.weight;
      apply_robust_loss(block.loss, eval.residual, std::span<Eigen::MatrixXd>(eval.jacobians));

      // Compress each Jacobian to the variable's free columns.
      std::vector<Eigen::MatrixXd> compressed(block.variables.size());
      for (std::size_t vi = 0; vi < block.variables.size(); ++vi) {
        const std::size_t var = block.variables[vi].index;
        if (var_offset[var] < 0) continue;
        int nfree = 0;
        for (const int c : free_cols[var]) nfree += (c >= 0);
        Eigen::MatrixXd jc(block.dim, nfree);
        for (std::size_t d = 0; d < free_cols[var].size(); ++d) {
          if (free_cols[var][d] >= 0) jc.col(free_cols[var][d]) = eval.jacobians[vi].col(d);
        }
        compressed[vi] = std::move(jc);
      }

      for (std::size_t vi = 0; vi < block.variables.size(); ++vi) {
        const std::size_t var_i = block.variables[vi].index;
        if (var_offset[var_i] < 0) continue;
        gradient.segment(var_offset[var_i], compressed[vi].cols()).noalias() +=
            compressed[vi].transpose() * eval.residual;
        for (std::size_t vj = 0; vj < block.variables.size(); ++vj) {
          const std::size_t var_j = block.variables[vj].index;
          if (var_offset[var_j] < 0) continue;
          hessian.block(var_offset[var_i], var_offset[var_j],
                        compressed[vi].cols(), compressed[vj].cols()).noalias() +=
              compressed[vi].transpose() * compressed[vj];
        }
      }
    }
    return true;
  };

  if (!linearize()) return fail("non-finite residual during linearization");

  double lambda = options.initial_lambda;
  bool done = false;

  while (!done && report.iterations < options.max_iterations) {
    // Damped normal equations: H + lambda * diag(H), floored so that
    // unobserved scalars stay put instead of breaking the factorization.
    bool stepped = false;
    while (!stepped) {
      Eigen::MatrixXd damped = hessian;
      for (int i = 0; i < num_free; ++i) {
        damped(i, i) += lambda * std::max(hessian(i, i), kDiagonalFloor);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(damped);
      if (llt.info() != Eigen::Success) {
        lambda *= options.lambda_up;
        if (lambda > kLambdaMax) {
          return fail("indefinite system");
        }
        continue;
      }
      const Eigen::VectorXd step = llt.solve(-gradient);

      std::vector<Value> trial(values);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        if (var_offset[i] < 0) continue;
        const int dim = tangent_dimension(vars[i].kind);
        Eigen::VectorXd full = Eigen::VectorXd::Zero(dim);
        for (int d = 0; d < dim; ++d) {
          if (free_cols[i][d] >= 0) full[d] = step[var_offset[i] + free_cols[i][d]];
        }
        trial[i] = apply_step(values[i], full);
      }

      const double trial_cost = evaluate_cost(trial, nullptr);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        values = std::move(trial);
        ++report.iterations;
        report.cost_trace.push_back(trial_cost);
        lambda = std::max(lambda / options.lambda_down, kLambdaMin);
        stepped = true;

        const double decrease = cost - trial_cost;
        cost = trial_cost;
        if (decrease <= options.relative_cost_tolerance * report.cost_trace[report.cost_trace.size() - 2] ||
            step.lpNorm<Eigen::Infinity>() <= options.parameter_tolerance ||
            cost <= options.absolute_cost_tolerance) {
          done = true;
        } else if (!linearize()) {
          return fail("non-finite residual during linearization");
        }
      } else {
        lambda *= options.lambda_up;
        if (lambda > kLambdaMax) {
          // No admissible step improves the cost: local minimum at the
          // resolution the damping can reach.
          done = true;
          stepped = true;
        }
      }
    }
  }

  for (std::size_t i = 0; i < vars.size(); ++i) vars[i].value = values[i];
  report.final_cost = cost;
  report.status = done ? SolverReport::Status::Converged : SolverReport::Status::MaxIterations;
  return report;
}

}  // namespace uwbfgo
