#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "thyrompc/sim.hpp"

namespace thyrompc {

namespace {

using Vec9 = Eigen::Matrix<double, kStateSize, 1>;
using Mat9 = Eigen::Matrix<double, kStateSize, kStateSize>;

constexpr double kScaleFloor = 1e-6;

Vec9 to_eigen(const StateVector &x) { return Eigen::Map<const Vec9>(x.data()); }

StateVector from_eigen(const Vec9 &v) {
  StateVector x;
  Eigen::Map<Vec9>(x.data()) = v;
  return x;
}

double scaled_norm(const StateVector &residual, const StateVector &x) {
  double worst = 0.0;
  for (std::size_t i = 0; i < kStateSize; ++i)
    worst = std::max(worst, std::abs(residual[i]) / std::max(std::abs(x[i]), kScaleFloor));
  return worst;
}

bool admissible(const StateVector &x) {
  for (std::size_t i = 0; i < kStateSize; ++i) {
    if (!std::isfinite(x[i]))
      return false;
    if (i != index(StateVar::MMI1) && i != index(StateVar::MMI2) && x[i] < 0.0)
      return false;
  }
  return true;
}

/// Damped Newton on residual(x) = 0 with Jacobian supplied by `jacobian`.
template <typename Residual, typename Jacobian>
int newton_polish(StateVector &x, double &norm, double tolerance, int max_iterations,
                  Residual &&residual, Jacobian &&jacobian) {
  int it = 0;
  StateVector r = residual(x);
  norm = scaled_norm(r, x);
  for (; it < max_iterations && norm > 1e-3 * tolerance; ++it) {
    const Mat9 jac = jacobian(x, r);
    const Vec9 delta = jac.partialPivLu().solve(-to_eigen(r));
    if (!delta.allFinite())
      break;
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      const StateVector trial = from_eigen(to_eigen(x) + t * delta);
      if (!admissible(trial))
        continue;
      const StateVector r_trial = residual(trial);
      const double n_trial = scaled_norm(r_trial, trial);
      if (n_trial < norm) {
        x = trial;
        r = r_trial;
        norm = n_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted)
      break;
  }
  return it;
}

}  // namespace

std::string_view method_name(SteadyStateMethod m) {
  return m == SteadyStateMethod::Relaxation ? "relaxation" : "root-finding";
}

double scaled_residual(const SystemState &state, const ModelParameters &params, double plasma) {
  return scaled_norm(evaluate_rhs(state.values, params, plasma), state.values);
}

SystemState reference_state(const ModelParameters &params) {
  SystemState s;
  s[StateVar::TSH] = 1.8;
  s[StateVar::T4] = 100.0;
  s[StateVar::T3p] = 1.8;
  s[StateVar::T3z] = 2.5;
  s[StateVar::T3c] = 3.5;
  s[StateVar::T3n] = 2.5;
  s[StateVar::ITg] = params.base.TPO * tpo_activity(0.0, params.tpo);
  return s;
}

double periodic_plasma(double dose_mg, double period_h, double t_h, const PkParameters &pk) {
  const double slow = std::exp(-pk.k_e * t_h) / (1.0 - std::exp(-pk.k_e * period_h));
  const double fast = std::exp(-pk.k_a * t_h) / (1.0 - std::exp(-pk.k_a * period_h));
  return dose_mg * pk.plasma_per_mg() * (slow - fast);
}

SteadyStateResult find_steady_state(const ModelParameters &params,
                                    std::optional<double> daily_dose_mg,
                                    const SteadyStateOptions &options,
                                    std::optional<SystemState> initial_guess) {
  params.validate();
  SteadyStateResult result;
  StateVector x = initial_guess.value_or(reference_state(params)).values;
  if (!admissible(x))
    throw SimError("steady state: initial guess is not admissible");

  if (!daily_dose_mg || *daily_dose_mg == 0.0) {
    const ForcingFn none = [](double) { return 0.0; };
    auto residual = [&params](const StateVector &s) { return evaluate_rhs(s, params, 0.0); };
    double norm = scaled_norm(residual(x), x);
    if (norm > options.tolerance) {
      x = propagate(SystemState{x}, params, none, options.relaxation_days * 24.0,
                    options.relaxation_step_h)
              .values;
      norm = scaled_norm(residual(x), x);
    }
    if (norm <= 1e-3 * options.tolerance) {
      result.method = SteadyStateMethod::Relaxation;
    } else {
      result.method = SteadyStateMethod::RootFinding;
      auto jacobian = [&params](const StateVector &s, const StateVector &) {
        Mat9 jac;
        for (std::size_t i = 0; i < kStateSize; ++i) {
          StateVector e{};
          e[i] = 1.0;
          jac.row(static_cast<Eigen::Index>(i)) = to_eigen(rhs_vjp(s, params, e)).transpose();
        }
        return jac;
      };
      result.newton_iterations =
          newton_polish(x, norm, options.tolerance, options.max_newton_iterations, residual, jacobian);
    }
    result.state = SystemState{x};
    result.residual_norm = norm;
    if (!(norm < options.tolerance))
      throw SimError("steady state did not converge: residual " + std::to_string(norm));
    return result;
  }

  const double dose = *daily_dose_mg;
  if (!(std::isfinite(dose) && dose > 0.0))
    throw SimError("steady state: daily dose must be positive");
  const double period = options.dosing_period_h;
  const ForcingFn forcing = [&params, dose, period](double t) {
    return periodic_plasma(dose, period, t, params.pk);
  };
  auto period_map = [&](const StateVector &s) {
    return propagate(SystemState{s}, params, forcing, period, options.periodic_step_h).values;
  };
  auto residual = [&](const StateVector &s) {
    StateVector next = period_map(s);
    for (std::size_t i = 0; i < kStateSize; ++i)
      next[i] -= s[i];
    return next;
  };

  double norm = scaled_norm(residual(x), x);
  const int relax_periods = static_cast<int>(std::ceil(options.relaxation_days * 24.0 / period));
  for (int k = 0; k < relax_periods && norm > options.periodic_tolerance; ++k) {
    const StateVector next = period_map(x);
    StateVector diff;
    for (std::size_t i = 0; i < kStateSize; ++i)
      diff[i] = next[i] - x[i];
    x = next;
    norm = scaled_norm(diff, x);
  }
  norm = scaled_norm(residual(x), x);
  if (norm <= 1e-3 * options.periodic_tolerance) {
    result.method = SteadyStateMethod::Relaxation;
  } else {
    result.method = SteadyStateMethod::RootFinding;
    auto jacobian = [&](const StateVector &s, const StateVector &r0) {
      Mat9 jac;
      for (std::size_t j = 0; j < kStateSize; ++j) {
        StateVector shifted = s;
        const double delta = 1e-6 * std::max(std::abs(s[j]), 1e-3);
        shifted[j] += delta;
        const StateVector r1 = residual(shifted);
        for (std::size_t i = 0; i < kStateSize; ++i)
          jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (r1[i] - r0[i]) / delta;
      }
      return jac;
    };
    result.newton_iterations = newton_polish(x, norm, options.periodic_tolerance,
                                             options.max_newton_iterations, residual, jacobian);
  }
  result.state = SystemState{x};
  result.residual_norm = norm;
  if (!(norm < options.periodic_tolerance))
    throw SimError("periodic steady state did not converge: residual " + std::to_string(norm));
  return result;
}

}  // namespace thyrompc
