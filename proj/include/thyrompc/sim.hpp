#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "thyrompc/model.hpp"

namespace thyrompc {

class SimError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IntegrationError : public SimError {
public:
  IntegrationError(const std::string &what, double t_h) : SimError(what), time_h(t_h) {}
  double time_h;
};

struct IntegratorConfig {
  double step_h = 0.01;
  double record_interval_h = 1.0;

  void validate() const;
  /// Number of steps covering `span_h`; throws unless it is a whole multiple.
  std::int64_t steps_for(double span_h) const;
};

/// Plasma MMI as a function of absolute time in hours.
using ForcingFn = std::function<double(double)>;

/// One classic 4th-order Runge-Kutta step given the forcing at t, t+h/2, t+h.
StateVector rk4_step(const StateVector &y, const ModelParameters &params, double h, double p_start,
                     double p_mid, double p_end);

struct Trajectory {
  std::vector<double> times_h;
  std::vector<SystemState> states;
  std::vector<double> plasma;  // MMI_plas
  std::vector<double> mmi_th;  // MMI_th
  std::vector<double> tpo_a;   // TPO_a

  std::size_t size() const { return times_h.size(); }
  bool empty() const { return times_h.empty(); }
  const SystemState &final_state() const { return states.back(); }

  /// Appends `other`, dropping its first sample when it duplicates our last.
  void append(const Trajectory &other);
};

/// Integrates from `t_start_h` for `duration_h` with plasma forcing from
/// `schedule` (absolute event times). Throws IntegrationError on a
/// non-finite or negative hormone state.
Trajectory integrate(const SystemState &initial, const ModelParameters &params,
                     const DoseSchedule &schedule, double duration_h, const IntegratorConfig &cfg,
                     double t_start_h = 0.0);

/// Same, with an arbitrary forcing function.
Trajectory integrate_forced(const SystemState &initial, const ModelParameters &params,
                            const ForcingFn &forcing, double duration_h,
                            const IntegratorConfig &cfg, double t_start_h = 0.0);

/// Final state only; no recording.
SystemState propagate(const SystemState &initial, const ModelParameters &params,
                      const ForcingFn &forcing, double duration_h, double step_h,
                      double t_start_h = 0.0);

struct TimeSeries {
  std::vector<double> times_h;
  std::vector<double> values;
};

/// Known names: every state name plus "MMI_plas", "MMI_th", "TPO_a".
TimeSeries trajectory_channel(const Trajectory &traj, std::string_view name);
std::vector<std::string> trajectory_channel_names();

// ---------------------------------------------------------------------------
// Steady states
// ---------------------------------------------------------------------------

enum class SteadyStateMethod { Relaxation, RootFinding };

std::string_view method_name(SteadyStateMethod m);

struct SteadyStateResult {
  SystemState state;
  double residual_norm = 0.0;
  SteadyStateMethod method = SteadyStateMethod::Relaxation;
  int newton_iterations = 0;
};

struct SteadyStateOptions {
  double tolerance = 1e-8;           // drug-free: scaled RHS norm
  double periodic_tolerance = 1e-9;  // dosed: relative change of the daily sample
  double relaxation_days = 120.0;
  double relaxation_step_h = 0.05;
  double dosing_period_h = 24.0;
  double periodic_step_h = 0.01;
  int max_newton_iterations = 40;
};

/// max_i |f_i| / max(|x_i|, 1e-6), in 1/h.
double scaled_residual(const SystemState &state, const ModelParameters &params, double plasma = 0.0);

/// Reference-point state used as the default initial guess.
SystemState reference_state(const ModelParameters &params);

/// Drug-free equilibrium, or with `daily_dose_mg` the once-per-period sample
/// of the periodic orbit under a constant dose given at the start of every
/// period. Throws SimError on non-convergence.
SteadyStateResult find_steady_state(const ModelParameters &params,
                                    std::optional<double> daily_dose_mg = std::nullopt,
                                    const SteadyStateOptions &options = {},
                                    std::optional<SystemState> initial_guess = std::nullopt);

/// Plasma forcing of an infinitely repeated dose with the given period,
/// evaluated at time since the most recent dose.
double periodic_plasma(double dose_mg, double period_h, double t_h, const PkParameters &pk);

}  // namespace thyrompc
