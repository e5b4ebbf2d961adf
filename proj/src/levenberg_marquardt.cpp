#include "ablreg/levenberg_marquardt.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ablreg {

namespace {

VecX evaluate_checked(const ResidualFn& residual, const VecX& x) {
  VecX r = residual(x);
  if (!r.allFinite()) {
    std::ostringstream msg;
    msg << "lm_minimize: non-finite residual at iterate [" << x.transpose() << "]";
    throw NonFiniteResidual(msg.str(), x);
  }
  return r;
}

}  // namespace

MatX forward_difference_jacobian(const ResidualFn& residual, const VecX& x, const VecX& r0) {
  const double eps = std::sqrt(std::numeric_limits<double>::epsilon());
  MatX j(r0.size(), x.size());
  VecX xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = eps * std::max(std::abs(x[k]), 1.0);
    xp[k] = x[k] + h;
    const double actual_h = xp[k] - x[k];
    j.col(k) = (evaluate_checked(residual, xp) - r0) / actual_h;
    xp[k] = x[k];
  }
  return j;
}

LmResult lm_minimize(const ResidualFn& residual, const JacobianFn& jacobian, const VecX& init,
                     const LmOptions& options) {
  LmResult out;
  VecX x = init;
  VecX r = evaluate_checked(residual, x);
  if (r.size() < x.size()) {
    throw Error("lm_minimize: fewer residuals than parameters");
  }
  double cost = 0.5 * r.squaredNorm();
  double lambda = options.initial_damping;

  const auto jac = [&](const VecX& at, const VecX& r_at) {
    return jacobian ? jacobian(at) : forward_difference_jacobian(residual, at, r_at);
  };

  MatX j = jac(x, r);
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (cost == 0.0) {
      out.reason = LmStopReason::zero_cost;
      break;
    }
    const VecX g = j.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      out.reason = LmStopReason::gradient;
      break;
    }
    const MatX jtj = j.transpose() * j;
    VecX diag = jtj.diagonal();
    const double floor = 1e-12 * std::max(1.0, diag.maxCoeff());
    for (Eigen::Index k = 0; k < diag.size(); ++k) diag[k] = std::max(diag[k], floor);

    bool accepted = false;
    bool tiny_step = false;
    // inner loop: raise damping until a step lowers the cost
    for (int attempt = 0; attempt < 60; ++attempt) {
      MatX a = jtj;
      a.diagonal() += lambda * diag;
      const VecX step = a.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= options.damping_up;
        continue;
      }
      if (step.norm() <= options.step_tolerance * (x.norm() + options.step_tolerance)) {
        tiny_step = true;
        break;
      }
      const VecX x_new = x + step;
      const VecX r_new = evaluate_checked(residual, x_new);
      const double cost_new = 0.5 * r_new.squaredNorm();
      if (cost_new < cost) {
        const double change = cost - cost_new;
        x = x_new;
        r = r_new;
        const double old_cost = cost;
        cost = cost_new;
        lambda = std::max(lambda / options.damping_down, 1e-15);
        accepted = true;
        if (options.relative_cost_tolerance > 0 && change < options.relative_cost_tolerance * old_cost) {
          out.reason = LmStopReason::cost_change;
          out.iterations = iter + 1;
          out.parameters = x;
          out.cost = cost;
          return out;
        }
        break;
      }
      lambda *= options.damping_up;
    }
    if (tiny_step || !accepted) {
      out.reason = LmStopReason::step;
      break;
    }
    j = jac(x, r);
  }
  if (iter == options.max_iterations) out.reason = LmStopReason::max_iterations;
  out.iterations = iter;
  out.parameters = x;
  out.cost = cost;
  return out;
}

}  // namespace ablreg
