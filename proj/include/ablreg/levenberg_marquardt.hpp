// Small dense Levenberg-Marquardt least-squares solver.

#pragma once

#include <functional>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "ablreg/geometry.hpp"

namespace ablreg {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

using ResidualFn = std::function<VecX(const VecX&)>;
using JacobianFn = std::function<MatX(const VecX&)>;

struct LmOptions {
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 10.0;
  double gradient_tolerance = 1e-12;  // infinity norm of J^T r
  double step_tolerance = 1e-14;      // relative to |x|
  /// Stop when an accepted step changes the cost by less than this fraction.
  /// Zero disables the test.
  double relative_cost_tolerance = 0.0;
  int max_iterations = 200;
};

enum class LmStopReason { gradient, step, cost_change, zero_cost, max_iterations };

struct LmResult {
  VecX parameters;
  double cost = 0.0;  // 0.5 * |r|^2
  int iterations = 0;
  LmStopReason reason = LmStopReason::max_iterations;
  bool converged() const { return reason != LmStopReason::max_iterations; }
};

/// Thrown when the residual function returns non-finite values.
class NonFiniteResidual : public Error {
 public:
  NonFiniteResidual(const std::string& what, VecX iterate) : Error(what), iterate(std::move(iterate)) {}
  VecX iterate;
};

/// Forward-difference Jacobian, step sqrt(eps) * max(|x_i|, 1).
MatX forward_difference_jacobian(const ResidualFn& residual, const VecX& x, const VecX& r0);

/// Minimizes 0.5 * |residual(x)|^2 starting at `init`. When `jacobian` is
/// empty, forward differences are used. Damping is Marquardt-scaled
/// (lambda * diag(J^T J)), multiplied on reject and divided on accept.
LmResult lm_minimize(const ResidualFn& residual, const JacobianFn& jacobian, const VecX& init,
                     const LmOptions& options = {});

}  // namespace ablreg
