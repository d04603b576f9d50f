#include "thyrompc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

namespace thyrompc {

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

ControlWeights ControlWeights::relative_to(const SystemState &target, double r_du, double r_u) {
  ControlWeights w;
  for (auto v : hormone_vars()) {
    const double ref = target[v];
    if (!(std::isfinite(ref) && ref > 0.0))
      throw MpcError("relative weights need a positive target for " + std::string(state_name(v)));
    w.q[index(v)] = 1.0 / (ref * ref);
  }
  w.r_du = r_du;
  w.r_u = r_u;
  return w;
}

ControlWeights ControlWeights::scaled(double factor) const {
  ControlWeights w = *this;
  for (auto &qi : w.q)
    qi *= factor;
  w.r_du *= factor;
  w.r_u *= factor;
  return w;
}

void ControlWeights::validate() const {
  bool any = false;
  for (double qi : q) {
    if (!(std::isfinite(qi) && qi >= 0.0))
      throw MpcError("weights: q entries must be finite and >= 0");
    any = any || qi > 0.0;
  }
  if (!any)
    throw MpcError("weights: at least one q entry must be positive");
  if (!(std::isfinite(r_du) && r_du >= 0.0 && std::isfinite(r_u) && r_u >= 0.0))
    throw MpcError("weights: r_du and r_u must be finite and >= 0");
}

std::string_view solver_method_name(SolverMethod m) {
  switch (m) {
  case SolverMethod::Newton:
    return "newton";
  case SolverMethod::GaussNewton:
    return "gauss-newton";
  case SolverMethod::SpectralGradient:
    return "spectral-gradient";
  }
  return "unknown";
}

void SolverOptions::validate() const {
  if (max_iterations < 0 || max_backtracks < 1 || stall_iterations < 1)
    throw MpcError("solver: iteration counts out of range");
  if (!(armijo > 0.0 && armijo < 1.0))
    throw MpcError("solver: armijo must lie in (0, 1)");
  if (!(step_tolerance >= 0.0 && relative_decrease_tolerance >= 0.0 &&
        absolute_decrease_tolerance >= 0.0))
    throw MpcError("solver: tolerances must be >= 0");
  if (screen_octaves < 0 || screen_per_octave < 1)
    throw MpcError("solver: screening grid out of range");
  if (!(initial_damping >= 0.0 && minimum_damping >= 0.0 && std::isfinite(initial_damping)))
    throw MpcError("solver: damping must be finite and >= 0");
  if (!(difference_step > 0.0 && difference_step < 1e-2))
    throw MpcError("solver: difference_step must lie in (0, 1e-2)");
  if (!(eigenvalue_floor > 0.0 && eigenvalue_floor < 1.0))
    throw MpcError("solver: eigenvalue_floor must lie in (0, 1)");
}

void MpcProblem::validate() const {
  if (horizon < 1)
    throw MpcError("mpc: horizon must be >= 1");
  if (!(std::isfinite(u_min) && std::isfinite(u_max) && u_min >= 0.0 && u_min <= u_max))
    throw MpcError("mpc: dose bounds must satisfy 0 <= u_min <= u_max");
  if (!(sample_period_h > 0.0))
    throw MpcError("mpc: sample period must be positive");
  if (!(quantum_mg >= 0.0))
    throw MpcError("mpc: quantum must be >= 0");
  weights.validate();
  solver.validate();
  try {
    IntegratorConfig{rollout_step_h, rollout_step_h}.validate();
    IntegratorConfig{rollout_step_h, rollout_step_h}.steps_for(sample_period_h);
  } catch (const SimError &e) {
    throw MpcError(std::string("mpc rollout: ") + e.what());
  }
  for (double t : target.values)
    if (!std::isfinite(t))
      throw MpcError("mpc: target must be finite");
}

// ---------------------------------------------------------------------------
// Horizon rollout and its discrete adjoint
// ---------------------------------------------------------------------------

namespace {

struct Rollout {
  double h = 0.0;
  std::int64_t steps_per_day = 0;
  std::int64_t steps = 0;
  std::vector<StateVector> y;  // steps + 1
  std::vector<double> p;       // plasma on the half-step grid, 2 steps + 1
};

PlasmaForcing horizon_forcing(std::span<const double> plan, const MpcProblem &problem,
                              const ModelParameters &params, const PendingDoses &pending) {
  std::vector<DoseEvent> events(pending.events().begin(), pending.events().end());
  for (std::size_t k = 0; k < plan.size(); ++k)
    events.push_back({problem.sample_period_h * static_cast<double>(k), plan[k]});
  return PlasmaForcing(DoseSchedule(std::move(events)), params.pk);
}

double stage_deviation(const StateVector &x, const SystemState &target, const StateVector &q) {
  double cost = 0.0;
  for (std::size_t i = 0; i < kStateSize; ++i) {
    const double d = x[i] - target.values[i];
    cost += q[i] * d * d;
  }
  return cost;
}

double input_cost(std::span<const double> plan, double u_prev, const ControlWeights &w) {
  double cost = 0.0;
  double last = u_prev;
  for (double u : plan) {
    cost += w.r_du * (u - last) * (u - last) + w.r_u * u * u;
    last = u;
  }
  return cost;
}

void check_plan(std::span<const double> plan, const MpcProblem &problem) {
  if (static_cast<int>(plan.size()) != problem.horizon)
    throw MpcError("plan length " + std::to_string(plan.size()) + " does not match horizon " +
                   std::to_string(problem.horizon));
  for (double u : plan)
    if (!std::isfinite(u) || u < 0.0)
      throw MpcError("plan contains an invalid dose");
}

std::string describe(std::span<const double> plan) {
  std::string s = "[";
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i)
      s += ", ";
    s += std::to_string(plan[i]);
  }
  return s + "]";
}

/// Integrates the horizon; returns the deviation part of the cost.
double forward(std::span<const double> plan, const SystemState &measured, const MpcProblem &problem,
               const ModelParameters &params, const PendingDoses &pending, Rollout &ws, bool store) {
  const PlasmaForcing forcing = horizon_forcing(plan, problem, params, pending);
  ws.h = problem.rollout_step_h;
  ws.steps_per_day = IntegratorConfig{ws.h, ws.h}.steps_for(problem.sample_period_h);
  ws.steps = ws.steps_per_day * problem.horizon;
  if (store) {
    ws.y.resize(static_cast<std::size_t>(ws.steps + 1));
    ws.p.resize(static_cast<std::size_t>(2 * ws.steps + 1));
  }
  const double half = 0.5 * ws.h;

  StateVector y = measured.values;
  double deviation = 0.0;
  double p_start = forcing(0.0);
  if (store) {
    ws.y[0] = y;
    ws.p[0] = p_start;
  }
  for (std::int64_t n = 0; n < ws.steps; ++n) {
    const double p_mid = forcing(static_cast<double>(2 * n + 1) * half);
    const double p_end = forcing(static_cast<double>(2 * n + 2) * half);
    y = rk4_step(y, params, ws.h, p_start, p_mid, p_end);
    p_start = p_end;
    if (store) {
      ws.y[static_cast<std::size_t>(n + 1)] = y;
      ws.p[static_cast<std::size_t>(2 * n + 1)] = p_mid;
      ws.p[static_cast<std::size_t>(2 * n + 2)] = p_end;
    }
    if ((n + 1) % ws.steps_per_day == 0) {
      for (double v : y)
        if (!std::isfinite(v))
          throw MpcError("horizon simulation diverged for candidate plan " + describe(plan));
      deviation += stage_deviation(y, problem.target, problem.weights.q);
    }
  }
  return deviation;
}

/// States at the end of days first_day .. horizon - 1, starting from `y0` at
/// the beginning of first_day.
std::vector<StateVector> day_end_states(std::span<const double> plan, const StateVector &y0,
                                        std::int64_t first_day, const MpcProblem &problem,
                                        const ModelParameters &params,
                                        const PendingDoses &pending, const Rollout &grid) {
  const PlasmaForcing forcing = horizon_forcing(plan, problem, params, pending);
  const double h = grid.h, half = 0.5 * h;
  std::vector<StateVector> out;
  out.reserve(static_cast<std::size_t>(problem.horizon - first_day));
  StateVector y = y0;
  std::int64_t n = first_day * grid.steps_per_day;
  double p_start = forcing(static_cast<double>(2 * n) * half);
  for (; n < grid.steps; ++n) {
    const double p_mid = forcing(static_cast<double>(2 * n + 1) * half);
    const double p_end = forcing(static_cast<double>(2 * n + 2) * half);
    y = rk4_step(y, params, h, p_start, p_mid, p_end);
    p_start = p_end;
    if ((n + 1) % grid.steps_per_day == 0)
      out.push_back(y);
  }
  return out;
}

StateVector add_scaled(const StateVector &a, double s, const StateVector &b) {
  StateVector out;
  for (std::size_t i = 0; i < kStateSize; ++i)
    out[i] = a[i] + s * b[i];
  return out;
}

/// Reverse sweep of the stored rollout; returns d(deviation)/d(plan).
std::vector<double> adjoint(const Rollout &ws, const MpcProblem &problem,
                            const ModelParameters &params) {
  const double h = ws.h;
  const auto &q = problem.weights.q;
  const std::size_t m2 = index(StateVar::MMI2);
  const double dfdp = rhs_plasma_sensitivity(params);
  std::vector<double> w(ws.p.size(), 0.0);  // d cost / d plasma on the half-step grid

  StateVector lambda{};
  for (std::int64_t n = ws.steps - 1; n >= 0; --n) {
    const auto nu = static_cast<std::size_t>(n);
    if ((n + 1) % ws.steps_per_day == 0) {
      const StateVector &x = ws.y[nu + 1];
      for (std::size_t i = 0; i < kStateSize; ++i)
        lambda[i] += 2.0 * q[i] * (x[i] - problem.target.values[i]);
    }
    const StateVector &y = ws.y[nu];
    const double p0 = ws.p[2 * nu], p1 = ws.p[2 * nu + 1];
    const StateVector k1 = evaluate_rhs(y, params, p0);
    const StateVector y2 = add_scaled(y, 0.5 * h, k1);
    const StateVector k2 = evaluate_rhs(y2, params, p1);
    const StateVector y3 = add_scaled(y, 0.5 * h, k2);
    const StateVector k3 = evaluate_rhs(y3, params, p1);
    const StateVector y4 = add_scaled(y, h, k3);

    StateVector mu4, mu3, mu2, mu1;
    for (std::size_t i = 0; i < kStateSize; ++i)
      mu4[i] = h / 6.0 * lambda[i];
    const StateVector l4 = rhs_vjp(y4, params, mu4);
    for (std::size_t i = 0; i < kStateSize; ++i)
      mu3[i] = h / 3.0 * lambda[i] + h * l4[i];
    const StateVector l3 = rhs_vjp(y3, params, mu3);
    for (std::size_t i = 0; i < kStateSize; ++i)
      mu2[i] = h / 3.0 * lambda[i] + 0.5 * h * l3[i];
    const StateVector l2 = rhs_vjp(y2, params, mu2);
    for (std::size_t i = 0; i < kStateSize; ++i)
      mu1[i] = h / 6.0 * lambda[i] + 0.5 * h * l2[i];
    const StateVector l1 = rhs_vjp(y, params, mu1);

    w[2 * nu] += dfdp * mu1[m2];
    w[2 * nu + 1] += dfdp * (mu2[m2] + mu3[m2]);
    w[2 * nu + 2] += dfdp * mu4[m2];
    for (std::size_t i = 0; i < kStateSize; ++i)
      lambda[i] += l1[i] + l2[i] + l3[i] + l4[i];
  }

  // d plasma(tau_m) / d u_j = gain (e^{-k_e (tau_m - t_j)} - e^{-k_a (tau_m - t_j)}) for
  // tau_m >= t_j; accumulate backwards with one decay factor per half step.
  const auto &pk = params.pk;
  const double decay_e = std::exp(-pk.k_e * 0.5 * h);
  const double decay_a = std::exp(-pk.k_a * 0.5 * h);
  std::vector<double> grad(static_cast<std::size_t>(problem.horizon), 0.0);
  const auto stride = static_cast<std::size_t>(2 * ws.steps_per_day);
  double sum_e = 0.0, sum_a = 0.0;
  for (std::size_t m = w.size(); m-- > 0;) {
    sum_e = w[m] + decay_e * sum_e;
    sum_a = w[m] + decay_a * sum_a;
    if (m % stride == 0 && m / stride < grad.size())
      grad[m / stride] = pk.plasma_per_mg() * (sum_e - sum_a);
  }
  return grad;
}

}  // namespace

double objective(std::span<const double> plan, const SystemState &measured, double u_prev,
                 const MpcProblem &problem, const ModelParameters &params,
                 const PendingDoses &pending) {
  check_plan(plan, problem);
  Rollout ws;
  return forward(plan, measured, problem, params, pending, ws, false) +
         input_cost(plan, u_prev, problem.weights);
}

namespace {

ObjectiveGradient value_and_gradient(std::span<const double> plan, const SystemState &measured,
                                     double u_prev, const MpcProblem &problem,
                                     const ModelParameters &params, const PendingDoses &pending,
                                     Rollout &ws) {
  ObjectiveGradient out;
  out.value = forward(plan, measured, problem, params, pending, ws, true) +
              input_cost(plan, u_prev, problem.weights);
  out.gradient = adjoint(ws, problem, params);
  const auto &w = problem.weights;
  const std::size_t n = plan.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double last = k == 0 ? u_prev : plan[k - 1];
    out.gradient[k] += 2.0 * w.r_du * (plan[k] - last) + 2.0 * w.r_u * plan[k];
    if (k + 1 < n)
      out.gradient[k] -= 2.0 * w.r_du * (plan[k + 1] - plan[k]);
  }
  return out;
}

}  // namespace

ObjectiveGradient objective_gradient(std::span<const double> plan, const SystemState &measured,
                                     double u_prev, const MpcProblem &problem,
                                     const ModelParameters &params, const PendingDoses &pending) {
  check_plan(plan, problem);
  Rollout ws;
  return value_and_gradient(plan, measured, u_prev, problem, params, pending, ws);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

std::vector<double> shifted_warm_start(std::span<const double> previous, int horizon) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(horizon));
  for (std::size_t k = 1; k < previous.size() && static_cast<int>(out.size()) < horizon; ++k)
    out.push_back(previous[k]);
  const double fill = previous.empty() ? 0.0 : previous.back();
  while (static_cast<int>(out.size()) < horizon)
    out.push_back(fill);
  return out;
}

namespace {

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v)
    m = std::max(m, std::abs(x));
  return m;
}

/// Minimizes g.d + d'Bd/2 over lo <= d <= hi (lo <= 0 <= hi, B positive
/// definite) with a primal active set started at d = 0.
Eigen::VectorXd box_qp(const Eigen::MatrixXd &B, const Eigen::VectorXd &g,
                       const Eigen::VectorXd &lo, const Eigen::VectorXd &hi) {
  const Eigen::Index n = g.size();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  std::vector<int> bound(static_cast<std::size_t>(n), 0);  // -1 lower, +1 upper
  for (Eigen::Index k = 0; k < n; ++k) {
    if (lo(k) == 0.0 && g(k) > 0.0)
      bound[k] = -1;
    else if (hi(k) == 0.0 && g(k) < 0.0)
      bound[k] = 1;
  }
  for (Eigen::Index iter = 0; iter < 20 * n + 20; ++iter) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index k = 0; k < n; ++k)
      if (bound[k] == 0)
        free.push_back(k);
    Eigen::VectorXd target = d;
    if (!free.empty()) {
      const auto m = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd Bff(m, m);
      Eigen::VectorXd rhs(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        double r = -g(free[a]);
        for (Eigen::Index k = 0; k < n; ++k)
          if (bound[k] != 0)
            r -= B(free[a], k) * d(k);
        rhs(a) = r;
        for (Eigen::Index b = 0; b < m; ++b)
          Bff(a, b) = B(free[a], free[b]);
      }
      const Eigen::VectorXd z = Bff.ldlt().solve(rhs);
      for (Eigen::Index a = 0; a < m; ++a)
        target(free[a]) = z(a);
    }
    double alpha = 1.0;
    Eigen::Index block = -1;
    int side = 0;
    for (Eigen::Index k : free) {
      const double step = target(k) - d(k);
      if (target(k) < lo(k) && step < 0.0) {
        const double a = (lo(k) - d(k)) / step;
        if (a < alpha) {
          alpha = a;
          block = k;
          side = -1;
        }
      } else if (target(k) > hi(k) && step > 0.0) {
        const double a = (hi(k) - d(k)) / step;
        if (a < alpha) {
          alpha = a;
          block = k;
          side = 1;
        }
      }
    }
    d += alpha * (target - d);
    if (block >= 0) {
      bound[block] = side;
      d(block) = side < 0 ? lo(block) : hi(block);
      continue;
    }
    const Eigen::VectorXd grad = g + B * d;
    Eigen::Index worst = -1;
    double violation = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double v = bound[k] < 0 ? -grad(k) : bound[k] > 0 ? grad(k) : 0.0;
      if (v > violation) {
        violation = v;
        worst = k;
      }
    }
    if (worst < 0)
      break;
    bound[worst] = 0;
  }
  return d.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

DosePlan plan(const SystemState &measured, double u_prev, const MpcProblem &problem,
              const ModelParameters &params, const PendingDoses &pending,
              const std::optional<DosePlan> &warm) {
  problem.validate();
  for (double v : measured.values)
    if (!std::isfinite(v))
      throw MpcError("measured state is not finite");

  const auto n = static_cast<std::size_t>(problem.horizon);
  const double lo = problem.u_min, hi = problem.u_max;
  auto project = [lo, hi](double u) { return std::clamp(u, lo, hi); };

  std::vector<double> x = warm ? shifted_warm_start(warm->doses, problem.horizon)
                               : std::vector<double>(n, 0.5 * (lo + hi));
  for (auto &u : x)
    u = project(u);

  DosePlan result;
  ObjectiveGradient fg = objective_gradient(x, measured, u_prev, problem, params, pending);
  result.evaluations = 1;
  result.warm_objective = fg.value;

  const double range = hi - lo;
  const auto &opt = problem.solver;
  if (range > 0.0 && opt.screen_constant_plans) {
    std::optional<double> best_level;
    double best = fg.value;
    auto consider = [&](double u) {
      const std::vector<double> candidate(n, u);
      const double f = objective(candidate, measured, u_prev, problem, params, pending);
      ++result.evaluations;
      if (f < best) {
        best = f;
        best_level = u;
      }
    };
    consider(lo);
    const int levels = opt.screen_octaves * opt.screen_per_octave;
    for (int k = 0; k <= levels; ++k) {
      const double u = hi * std::exp2(-static_cast<double>(k) / opt.screen_per_octave);
      if (u <= lo)
        break;
      consider(u);
    }
    if (best_level) {
      x.assign(n, *best_level);
      fg = objective_gradient(x, measured, u_prev, problem, params, pending);
      ++result.evaluations;
    }
  }
  result.seed_objective = fg.value;
  if (range == 0.0) {
    result.doses = x;
    result.objective = fg.value;
    result.converged = true;
    return result;
  }

  double reference_cost = 0.0;
  for (std::size_t i = 0; i < kStateSize; ++i)
    reference_cost += problem.weights.q[i] * problem.target.values[i] * problem.target.values[i];
  const double floor = opt.absolute_decrease_tolerance * problem.horizon * reference_cost;
  int stalled = 0;
  // true once enough consecutive accepted steps barely moved the objective
  auto stall = [&](double decrease, double f) {
    if (decrease <= opt.relative_decrease_tolerance * std::abs(f) + floor)
      return ++stalled >= opt.stall_iterations;
    stalled = 0;
    return false;
  };
  std::vector<double> d(n), trial(n);

  if (opt.method == SolverMethod::SpectralGradient) {
    auto fallback_alpha = [range](std::span<const double> g) {
      const double gn = inf_norm(g);
      return gn > 0.0 ? range / gn : 1.0;
    };
    double alpha = fallback_alpha(fg.gradient);
    for (int it = 0; it < opt.max_iterations; ++it) {
      for (std::size_t k = 0; k < n; ++k)
        d[k] = project(x[k] - alpha * fg.gradient[k]) - x[k];
      if (inf_norm(d) <= opt.step_tolerance) {
        result.converged = true;
        break;
      }
      const double slope =
          std::inner_product(fg.gradient.begin(), fg.gradient.end(), d.begin(), 0.0);
      if (!(slope < 0.0)) {
        result.converged = true;
        break;
      }
      double t = 1.0;
      bool accepted = false;
      for (int b = 0; b < opt.max_backtracks; ++b, t *= 0.5) {
        for (std::size_t k = 0; k < n; ++k)
          trial[k] = project(x[k] + t * d[k]);
        const double f_trial = objective(trial, measured, u_prev, problem, params, pending);
        ++result.evaluations;
        if (f_trial <= fg.value + opt.armijo * t * slope) {
          accepted = true;
          break;
        }
      }
      ++result.iterations;
      if (!accepted)
        break;

      ObjectiveGradient next =
          objective_gradient(trial, measured, u_prev, problem, params, pending);
      ++result.evaluations;
      double ss = 0.0, sy = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double s = trial[k] - x[k];
        ss += s * s;
        sy += s * (next.gradient[k] - fg.gradient[k]);
      }
      const double decrease = fg.value - next.value;
      x = trial;
      fg = std::move(next);
      alpha = sy > 0.0 ? ss / sy : fallback_alpha(fg.gradient);
      if (stall(decrease, fg.value)) {
        result.converged = true;
        break;
      }
    }
    result.doses = x;
    result.objective = fg.value;
    return result;
  }

  // Projected Newton or Gauss-Newton steps from a damped quadratic model. For
  // Gauss-Newton the deviation part is a sum of squares of the weighted
  // day-end residuals and the input part is quadratic.
  std::vector<std::size_t> active;
  std::vector<double> root_q;
  for (std::size_t i = 0; i < kStateSize; ++i)
    if (problem.weights.q[i] > 0.0) {
      active.push_back(i);
      root_q.push_back(std::sqrt(problem.weights.q[i]));
    }
  const std::size_t na = active.size();
  const auto &w = problem.weights;
  Eigen::MatrixXd input_hessian = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    input_hessian(k, k) += 2.0 * (w.r_du + w.r_u);
    if (k + 1 < n) {
      input_hessian(k, k) += 2.0 * w.r_du;
      input_hessian(k, k + 1) -= 2.0 * w.r_du;
      input_hessian(k + 1, k) -= 2.0 * w.r_du;
    }
  }

  Rollout ws;
  fg = value_and_gradient(x, measured, u_prev, problem, params, pending, ws);
  ++result.evaluations;
  double mu = opt.initial_damping;
  Eigen::MatrixXd jac(n * na, n);
  auto difference_step = [&](double u) {
    const double h = opt.difference_step * std::max(std::abs(u), 1e-3 * range);
    return u + h > hi ? -h : h;
  };
  Eigen::VectorXd g(n), dlo(n), dhi(n);

  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::MatrixXd B(n, n);
    if (opt.method == SolverMethod::Newton) {
      // columns of the exact Hessian by differencing adjoint gradients
      Rollout scratch;
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> pert = x;
        const double h = difference_step(x[j]);
        pert[j] += h;
        const ObjectiveGradient gj =
            value_and_gradient(pert, measured, u_prev, problem, params, pending, scratch);
        ++result.evaluations;
        for (std::size_t k = 0; k < n; ++k)
          B(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
              (gj.gradient[k] - fg.gradient[k]) / h;
      }
      // symmetrize, then flip and floor the eigenvalues
      const Eigen::MatrixXd sym = 0.5 * (B + B.transpose());
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
      Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
      const double top = ev.maxCoeff();
      ev = ev.cwiseMax(opt.eigenvalue_floor * top);
      B = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    } else {
      jac.setZero();
      const auto spd = static_cast<std::size_t>(ws.steps_per_day);
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> pert = x;
        const double h = difference_step(x[j]);
        pert[j] += h;
        const auto states = day_end_states(pert, ws.y[j * spd], static_cast<std::int64_t>(j),
                                           problem, params, pending, ws);
        ++result.evaluations;
        for (std::size_t k = j; k < n; ++k) {
          const StateVector &base = ws.y[(k + 1) * spd];
          for (std::size_t a = 0; a < na; ++a)
            jac(static_cast<Eigen::Index>(k * na + a), static_cast<Eigen::Index>(j)) =
                root_q[a] * (states[k - j][active[a]] - base[active[a]]) / h;
        }
      }
      B = 2.0 * jac.transpose() * jac + input_hessian;
    }
    Eigen::MatrixXd damped = B;
    const double ridge = 1e-14 * B.diagonal().maxCoeff();
    for (std::size_t k = 0; k < n; ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      damped(e, e) += mu * B(e, e) + ridge;
      g(e) = fg.gradient[k];
      dlo(e) = lo - x[k];
      dhi(e) = hi - x[k];
    }
    const Eigen::VectorXd step = box_qp(damped, g, dlo, dhi);
    for (std::size_t k = 0; k < n; ++k)
      d[k] = step(static_cast<Eigen::Index>(k));
    if (inf_norm(d) <= opt.step_tolerance) {
      result.converged = true;
      break;
    }
    const double slope = g.dot(step);
    if (!(slope < 0.0)) {
      result.converged = true;
      break;
    }
    const double predicted = -(slope + 0.5 * step.dot(B * step));

    double t = 1.0, f_trial = 0.0;
    bool accepted = false;
    for (int b = 0; b < opt.max_backtracks; ++b, t *= 0.5) {
      for (std::size_t k = 0; k < n; ++k)
        trial[k] = project(x[k] + t * d[k]);
      f_trial = objective(trial, measured, u_prev, problem, params, pending);
      ++result.evaluations;
      if (f_trial <= fg.value + opt.armijo * t * slope) {
        accepted = true;
        break;
      }
    }
    ++result.iterations;
    if (!accepted)
      break;
    const double rho = t == 1.0 && predicted > 0.0 ? (fg.value - f_trial) / predicted : 0.0;
    if (rho > 0.75)
      mu = std::max(mu / 3.0, opt.minimum_damping);
    else if (rho < 0.25)
      mu = std::min(mu * 4.0, 1e12);

    const double previous = fg.value;
    x = trial;
    fg = value_and_gradient(x, measured, u_prev, problem, params, pending, ws);
    ++result.evaluations;
    if (stall(previous - fg.value, fg.value)) {
      result.converged = true;
      break;
    }
  }

  result.doses = x;
  result.objective = fg.value;
  return result;
}

// ---------------------------------------------------------------------------
// Receding horizon
// ---------------------------------------------------------------------------

Controller::Controller(MpcProblem problem, ModelParameters model)
    : problem_(std::move(problem)), model_(std::move(model)) {
  problem_.validate();
  model_.validate();
}

PendingDoses Controller::pending() const {
  std::vector<DoseEvent> events;
  events.reserve(history_.size());
  for (std::size_t i = 0; i < history_.size(); ++i) {
    const double days_ago = static_cast<double>(day_) - static_cast<double>(i);
    events.push_back({-problem_.sample_period_h * days_ago, history_[i]});
  }
  return PendingDoses(std::move(events));
}

std::vector<double> Controller::next_warm_start() const {
  if (!last_plan_)
    return std::vector<double>(static_cast<std::size_t>(problem_.horizon),
                               0.5 * (problem_.u_min + problem_.u_max));
  return shifted_warm_start(last_plan_->doses, problem_.horizon);
}

double Controller::receding_step(const SystemState &measured) {
  DosePlan p = plan(measured, u_prev_, problem_, model_, pending(), last_plan_);
  double u = p.doses.front();
  if (problem_.quantum_mg > 0.0)
    u = std::clamp(std::round(u / problem_.quantum_mg) * problem_.quantum_mg, problem_.u_min,
                   problem_.u_max);
  u = std::clamp(u, problem_.u_min, problem_.u_max);
  last_plan_ = std::move(p);
  u_prev_ = u;
  history_.push_back(u);
  ++day_;
  return u;
}

}  // namespace thyrompc
