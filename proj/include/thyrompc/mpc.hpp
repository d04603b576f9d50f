#pragma once

#include <optional>
#include <span>
#include <vector>

#include "thyrompc/model.hpp"
#include "thyrompc/sim.hpp"

namespace thyrompc {

class MpcError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ControlWeights {
  StateVector q{};     // per-state weight on (x - target)^2
  double r_du = 1e-2;  // weight on (u_k - u_{k-1})^2, 1/mg^2
  double r_u = 1e-2;   // weight on u_k^2, 1/mg^2

  /// q_i = 1 / target_i^2 on the hormone channels, 0 elsewhere.
  static ControlWeights relative_to(const SystemState &target, double r_du = 1e-2, double r_u = 1e-2);

  ControlWeights scaled(double factor) const;
  void validate() const;
};

enum class SolverMethod { Newton, GaussNewton, SpectralGradient };
std::string_view solver_method_name(SolverMethod m);

/// Projected descent with monotone Armijo backtracking. Newton and
/// GaussNewton step to the minimizer of a damped box-constrained quadratic
/// model, built from a differenced Hessian (eigenvalues made positive) or the
/// Gauss-Newton curvature; SpectralGradient takes Barzilai-Borwein scaled
/// projected gradient steps.
struct SolverOptions {
  SolverMethod method = SolverMethod::Newton;
  int max_iterations = 100;
  int max_backtracks = 60;
  double armijo = 1e-4;
  /// Converged when the scaled projected step, in mg, falls below this.
  double step_tolerance = 1e-10;
  /// An accepted step stalls when it lowers the objective by less than
  /// relative * |f| + absolute * horizon * sum_i q_i target_i^2.
  double relative_decrease_tolerance = 1e-10;
  double absolute_decrease_tolerance = 1e-10;
  /// Consecutive stalled steps that count as convergence.
  int stall_iterations = 3;
  /// Levenberg-Marquardt damping relative to the model curvature diagonal.
  double initial_damping = 1e-6;
  double minimum_damping = 1e-12;
  /// Relative dose perturbation for the differenced curvature.
  double difference_step = 1e-6;
  /// Smallest model eigenvalue relative to the largest.
  double eigenvalue_floor = 1e-10;

  void validate() const;
  /// Before descending, also try u_min and constant plans
  /// u_max * 2^(-k / screen_per_octave) for k = 0 .. screen_octaves *
  /// screen_per_octave; the best of these and the warm start seeds descent.
  bool screen_constant_plans = true;
  int screen_octaves = 30;
  int screen_per_octave = 4;
};

struct MpcProblem {
  int horizon = 15;           // days
  double u_min = 0.0;         // mg
  double u_max = 40.0;        // mg
  SystemState target;
  ControlWeights weights;
  double sample_period_h = 24.0;
  double rollout_step_h = 0.05;
  SolverOptions solver;
  double quantum_mg = 0.0;    // > 0 rounds the administered first dose

  void validate() const;
};

struct DosePlan {
  std::vector<double> doses;
  double objective = 0.0;
  double warm_objective = 0.0;  // objective of the (projected) warm start
  double seed_objective = 0.0;  // objective where the descent started
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Horizon-relative plasma tails: events at t <= 0 measured from now.
using PendingDoses = DoseSchedule;

/// Cost of `plan` over the horizon starting at `measured`.
double objective(std::span<const double> plan, const SystemState &measured, double u_prev,
                 const MpcProblem &problem, const ModelParameters &params,
                 const PendingDoses &pending);

struct ObjectiveGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Value and exact gradient of `objective` via the discrete adjoint of the
/// RK4 rollout.
ObjectiveGradient objective_gradient(std::span<const double> plan, const SystemState &measured,
                                     double u_prev, const MpcProblem &problem,
                                     const ModelParameters &params, const PendingDoses &pending);

/// Warm start from a previous plan: shifted by one day, last entry repeated.
std::vector<double> shifted_warm_start(std::span<const double> previous, int horizon);

DosePlan plan(const SystemState &measured, double u_prev, const MpcProblem &problem,
              const ModelParameters &params, const PendingDoses &pending,
              const std::optional<DosePlan> &warm = std::nullopt);

/// Receding-horizon controller holding warm start, u_prev and dosing history.
class Controller {
public:
  Controller(MpcProblem problem, ModelParameters model);

  /// Plans from `measured` at the current day, commits the first element and
  /// advances one day. Returns the commanded dose.
  double receding_step(const SystemState &measured);

  const MpcProblem &problem() const { return problem_; }
  const ModelParameters &model() const { return model_; }
  int day() const { return day_; }
  double u_prev() const { return u_prev_; }
  const std::optional<DosePlan> &last_plan() const { return last_plan_; }
  std::span<const double> history() const { return history_; }
  /// The warm start the next call will use.
  std::vector<double> next_warm_start() const;
  /// Commanded doses of previous days relative to the current day.
  PendingDoses pending() const;

private:
  MpcProblem problem_;
  ModelParameters model_;
  int day_ = 0;
  double u_prev_ = 0.0;
  std::optional<DosePlan> last_plan_;
  std::vector<double> history_;
};

}  // namespace thyrompc
