#include "thyrompc/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace thyrompc {

std::vector<AdherenceEvent> default_adherence() {
  return {{4, 0.0}, {12, 0.0}, {13, 2.0}, {26, 2.0}, {34, 0.0}};
}

void NoiseSpec::validate() const {
  if (!std::isfinite(mu))
    throw ScenarioError("noise: mu must be finite");
  if (!(std::isfinite(sigma) && sigma > 0.0))
    throw ScenarioError("noise: sigma must be positive");
  if (!(std::isfinite(truncation) && truncation > 0.0))
    throw ScenarioError("noise: truncation must be positive");
}

void MismatchSpec::validate() const {
  for (double f : {G_D1, G_T3, G_D2})
    if (!(std::isfinite(f) && f > 0.0))
      throw ScenarioError("mismatch: factors must be positive");
}

ScenarioSpec ScenarioSpec::preset(IodideRegime regime, bool disturbed) {
  ScenarioSpec s;
  s.regime = regime;
  s.disturbed = disturbed;
  s.model = ModelParameters::nominal(regime);
  return s;
}

void ScenarioSpec::validate() const {
  if (duration_days < 1)
    throw ScenarioError("scenario: duration must be at least one day");
  if (!(std::isfinite(gt_factor) && gt_factor > 0.0))
    throw ScenarioError("scenario: G_T factor must be positive");
  noise.validate();
  mismatch.validate();
  for (const auto &e : adherence) {
    if (e.day < 0)
      throw ScenarioError("adherence: day must be nonnegative");
    if (e.factor != 0.0 && e.factor != 2.0)
      throw ScenarioError("adherence: factor must be 0 or 2");
  }
  for (std::size_t i = 0; i < adherence.size(); ++i)
    for (std::size_t j = i + 1; j < adherence.size(); ++j)
      if (adherence[i].day == adherence[j].day)
        throw ScenarioError("adherence: two events on day " + std::to_string(adherence[i].day));
  model.validate();
  integrator.validate();
  if (mpc.sample_period_h != 24.0)
    throw ScenarioError("scenario: the closed loop doses once per 24 h");
  MpcProblem check = mpc;
  check.target = SystemState{};
  if (std::none_of(check.weights.q.begin(), check.weights.q.end(), [](double q) { return q > 0.0; }))
    check.weights.q[index(StateVar::TSH)] = 1.0;
  check.validate();
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::mt19937_64 noise_stream(std::uint64_t seed, int day, std::size_t channel) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(day));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(channel) << 32));
  return std::mt19937_64(h);
}

double uniform_open(std::mt19937_64 &rng) {
  for (;;) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u > 0.0)
      return u;
  }
}

double standard_normal(std::mt19937_64 &rng) {
  for (;;) {
    const double a = 2.0 * uniform_open(rng) - 1.0;
    const double b = 2.0 * uniform_open(rng) - 1.0;
    const double s = a * a + b * b;
    if (s > 0.0 && s < 1.0)
      return a * std::sqrt(-2.0 * std::log(s) / s);
  }
}

double truncated_gaussian(std::mt19937_64 &rng, const NoiseSpec &spec) {
  for (;;) {
    const double e = spec.sigma * standard_normal(rng);
    if (std::abs(e) <= spec.truncation)
      return spec.mu + e;
  }
}

SystemState apply_measurement_noise(const SystemState &true_state, const NoiseSpec &spec,
                                    std::uint64_t seed, int day) {
  SystemState out = true_state;
  for (StateVar v : spec.channels) {
    auto rng = noise_stream(seed, day, index(v));
    out[v] = std::max(0.0, true_state[v] + truncated_gaussian(rng, spec));
  }
  return out;
}

ModelParameters build_mismatched_plant(const ModelParameters &nominal, const MismatchSpec &spec) {
  nominal.validate();
  spec.validate();
  ModelParameters p = nominal;
  p.G_D1 *= spec.G_D1;
  p.G_T3 *= spec.G_T3;
  p.G_D2 *= spec.G_D2;
  return p;
}

double apply_adherence(double planned_mg, int day, const std::vector<AdherenceEvent> &events) {
  if (!(planned_mg >= 0.0))
    throw ScenarioError("adherence: planned dose must be nonnegative");
  std::optional<double> factor;
  for (const auto &e : events) {
    if (e.day != day)
      continue;
    if (factor)
      throw ScenarioError("adherence: conflicting events on day " + std::to_string(day));
    factor = e.factor;
  }
  return planned_mg * factor.value_or(1.0);
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

std::optional<std::size_t> ClosedLoopTrace::day_of(double t_h) const {
  if (days.empty() || t_h < 0.0)
    return std::nullopt;
  const auto d = static_cast<std::size_t>(std::floor(t_h / 24.0));
  return std::min(d, days.size() - 1);
}

double ClosedLoopTrace::cumulative_administered_mg(int through_day) const {
  double total = 0.0;
  for (const auto &r : days)
    if (r.day <= through_day)
      total += r.administered_mg;
  return total;
}

ClosedLoopTrace run_scenario(const ScenarioSpec &spec) {
  spec.validate();
  ClosedLoopTrace trace;
  trace.spec = spec;

  trace.target = find_steady_state(spec.model).state;
  trace.controller_model = spec.model.hyperthyroid(spec.gt_factor);
  trace.plant_model = spec.disturbed ? build_mismatched_plant(trace.controller_model, spec.mismatch)
                                     : trace.controller_model;
  trace.initial = find_steady_state(trace.plant_model);

  MpcProblem problem = spec.mpc;
  problem.target = trace.target;
  if (std::none_of(problem.weights.q.begin(), problem.weights.q.end(),
                   [](double q) { return q > 0.0; }))
    problem.weights =
        ControlWeights::relative_to(trace.target, problem.weights.r_du, problem.weights.r_u);
  Controller controller(problem, trace.controller_model);

  const std::vector<AdherenceEvent> no_events;
  const auto &events = spec.disturbed ? spec.adherence : no_events;
  DoseSchedule administered;
  SystemState x = trace.initial.state;

  for (int d = 0; d < spec.duration_days; ++d) {
    const double t0 = 24.0 * d;
    DayRecord rec;
    rec.day = d;
    rec.true_state = x;
    rec.measured = spec.disturbed ? apply_measurement_noise(x, spec.noise, spec.seed, d) : x;
    try {
      rec.planned_mg = controller.receding_step(rec.measured);
    } catch (const std::exception &e) {
      trace.failure = FailureRecord{"mpc-controller", e.what(), d, t0};
      break;
    }
    rec.plan = *controller.last_plan();
    rec.descent = rec.plan.objective <= rec.plan.warm_objective + 1e-12;
    rec.administered_mg = apply_adherence(rec.planned_mg, d, events);
    if (rec.administered_mg > 0.0)
      administered.add({t0, rec.administered_mg});
    trace.days.push_back(rec);
    try {
      const Trajectory seg = integrate(x, trace.plant_model, administered, 24.0, spec.integrator, t0);
      trace.trajectory.append(seg);
      x = seg.final_state();
    } catch (const IntegrationError &e) {
      trace.failure = FailureRecord{"sim-engine", e.what(), d, e.time_h};
      break;
    } catch (const std::exception &e) {
      trace.failure = FailureRecord{"sim-engine", e.what(), d, t0};
      break;
    }
  }
  return trace;
}

unsigned thread_cap_from_env() {
  if (const char *env = std::getenv("THYROMPC_THREADS")) {
    char *end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0)
      return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<ClosedLoopTrace> run_scenarios(const std::vector<ScenarioSpec> &specs,
                                           unsigned max_threads) {
  std::vector<ClosedLoopTrace> out(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        out[i] = run_scenario(specs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = std::min<std::size_t>(std::max(1u, max_threads), specs.size());
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n; ++k)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

double worst_relative_deviation(const SystemState &x, const SystemState &target) {
  double worst = 0.0;
  for (StateVar v : hormone_vars())
    worst = std::max(worst, std::abs(x[v] / target[v] - 1.0));
  return worst;
}

std::optional<double> band_entry_time(const Trajectory &traj, const SystemState &target,
                                      double band, double from_h) {
  std::optional<double> entry;
  for (std::size_t i = traj.size(); i-- > 0;) {
    if (traj.times_h[i] < from_h)
      break;
    if (worst_relative_deviation(traj.states[i], target) > band)
      break;
    entry = traj.times_h[i];
  }
  return entry;
}

}  // namespace thyrompc
