#include "thyrompc/sim.hpp"

#include <cmath>
#include <iterator>

namespace thyrompc {

namespace {

constexpr double kMaxStep = 0.05;

bool is_hormone_or_itg(std::size_t i) {
  return i != index(StateVar::MMI1) && i != index(StateVar::MMI2);
}

void check_state(const StateVector &y, double t) {
  for (std::size_t i = 0; i < kStateSize; ++i) {
    if (!std::isfinite(y[i]))
      throw IntegrationError("non-finite " + std::string(state_name(all_state_vars()[i])) +
                                 " at t=" + std::to_string(t) + " h",
                             t);
    if (is_hormone_or_itg(i) && y[i] < 0.0)
      throw IntegrationError("negative " + std::string(state_name(all_state_vars()[i])) +
                                 " at t=" + std::to_string(t) + " h",
                             t);
  }
}

void record(Trajectory &traj, double t, const StateVector &y, double plasma,
            const ModelParameters &params) {
  const double th = mmi_th(y, params.filter);
  traj.times_h.push_back(t);
  traj.states.push_back(SystemState{y});
  traj.plasma.push_back(plasma);
  traj.mmi_th.push_back(th);
  traj.tpo_a.push_back(tpo_activity(th, params.tpo));
}

}  // namespace

void IntegratorConfig::validate() const {
  if (!(std::isfinite(step_h) && step_h > 0.0 && step_h <= kMaxStep))
    throw SimError("integrator: step must lie in (0, 0.05] h");
  if (!(std::isfinite(record_interval_h) && record_interval_h >= step_h))
    throw SimError("integrator: record interval must be >= step");
  const double ratio = record_interval_h / step_h;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
    throw SimError("integrator: record interval must be an integer multiple of the step");
}

std::int64_t IntegratorConfig::steps_for(double span_h) const {
  const double ratio = span_h / step_h;
  const auto n = static_cast<std::int64_t>(std::llround(ratio));
  if (n < 0 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio))
    throw SimError("integrator: span " + std::to_string(span_h) + " h is not a multiple of the step");
  return n;
}

StateVector rk4_step(const StateVector &y, const ModelParameters &params, double h, double p_start,
                     double p_mid, double p_end) {
  StateVector stage;
  const StateVector k1 = evaluate_rhs(y, params, p_start);
  for (std::size_t i = 0; i < kStateSize; ++i)
    stage[i] = y[i] + 0.5 * h * k1[i];
  const StateVector k2 = evaluate_rhs(stage, params, p_mid);
  for (std::size_t i = 0; i < kStateSize; ++i)
    stage[i] = y[i] + 0.5 * h * k2[i];
  const StateVector k3 = evaluate_rhs(stage, params, p_mid);
  for (std::size_t i = 0; i < kStateSize; ++i)
    stage[i] = y[i] + h * k3[i];
  const StateVector k4 = evaluate_rhs(stage, params, p_end);
  StateVector out;
  for (std::size_t i = 0; i < kStateSize; ++i)
    out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

void Trajectory::append(const Trajectory &other) {
  std::size_t first = 0;
  if (!empty() && !other.empty() && other.times_h.front() == times_h.back())
    first = 1;
  auto tail = [first](auto &dst, const auto &src) {
    dst.insert(dst.end(), std::next(src.begin(), static_cast<std::ptrdiff_t>(first)), src.end());
  };
  tail(times_h, other.times_h);
  tail(states, other.states);
  tail(plasma, other.plasma);
  tail(mmi_th, other.mmi_th);
  tail(tpo_a, other.tpo_a);
}

Trajectory integrate_forced(const SystemState &initial, const ModelParameters &params,
                            const ForcingFn &forcing, double duration_h,
                            const IntegratorConfig &cfg, double t_start_h) {
  cfg.validate();
  if (!(duration_h > 0.0))
    throw SimError("integrate: duration must be positive");
  check_state(initial.values, t_start_h);

  const double h = cfg.step_h;
  const std::int64_t steps = cfg.steps_for(duration_h);
  const auto stride = static_cast<std::int64_t>(std::llround(cfg.record_interval_h / h));

  Trajectory traj;
  const auto samples = static_cast<std::size_t>(steps / stride) + 1;
  traj.times_h.reserve(samples);
  traj.states.reserve(samples);

  StateVector y = initial.values;
  double p_start = forcing(t_start_h);
  record(traj, t_start_h, y, p_start, params);
  for (std::int64_t n = 0; n < steps; ++n) {
    const double t = t_start_h + static_cast<double>(n) * h;
    const double t_end = t_start_h + static_cast<double>(n + 1) * h;
    const double p_mid = forcing(t + 0.5 * h);
    const double p_end = forcing(t_end);
    y = rk4_step(y, params, h, p_start, p_mid, p_end);
    check_state(y, t_end);
    p_start = p_end;
    if ((n + 1) % stride == 0)
      record(traj, t_end, y, p_end, params);
  }
  return traj;
}

Trajectory integrate(const SystemState &initial, const ModelParameters &params,
                     const DoseSchedule &schedule, double duration_h, const IntegratorConfig &cfg,
                     double t_start_h) {
  const PlasmaForcing forcing(schedule, params.pk);
  return integrate_forced(
      initial, params, [&forcing](double t) { return forcing(t); }, duration_h, cfg, t_start_h);
}

SystemState propagate(const SystemState &initial, const ModelParameters &params,
                      const ForcingFn &forcing, double duration_h, double step_h,
                      double t_start_h) {
  IntegratorConfig cfg{step_h, step_h};
  cfg.validate();
  const std::int64_t steps = cfg.steps_for(duration_h);
  StateVector y = initial.values;
  double p_start = forcing(t_start_h);
  for (std::int64_t n = 0; n < steps; ++n) {
    const double t = t_start_h + static_cast<double>(n) * step_h;
    const double t_end = t_start_h + static_cast<double>(n + 1) * step_h;
    const double p_end = forcing(t_end);
    y = rk4_step(y, params, step_h, p_start, forcing(t + 0.5 * step_h), p_end);
    p_start = p_end;
  }
  check_state(y, t_start_h + duration_h);
  return SystemState{y};
}

namespace {

constexpr std::string_view kDerived[] = {"MMI_plas", "MMI_th", "TPO_a"};

}  // namespace

std::vector<std::string> trajectory_channel_names() {
  std::vector<std::string> names;
  for (auto v : all_state_vars())
    names.emplace_back(state_name(v));
  for (auto d : kDerived)
    names.emplace_back(d);
  return names;
}

TimeSeries trajectory_channel(const Trajectory &traj, std::string_view name) {
  TimeSeries out;
  out.times_h = traj.times_h;
  if (name == "MMI_plas") {
    out.values = traj.plasma;
  } else if (name == "MMI_th") {
    out.values = traj.mmi_th;
  } else if (name == "TPO_a") {
    out.values = traj.tpo_a;
  } else if (auto v = state_from_name(name)) {
    out.values.reserve(traj.size());
    for (const auto &s : traj.states)
      out.values.push_back(s[*v]);
  } else {
    throw SimError("unknown trajectory channel '" + std::string(name) + "'");
  }
  return out;
}

}  // namespace thyrompc
