#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "thyrompc/model.hpp"
#include "thyrompc/mpc.hpp"
#include "thyrompc/sim.hpp"

namespace thyrompc {

class ScenarioError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Additive truncated Gaussian error on the listed channels, in each
/// channel's own units.
struct NoiseSpec {
  double mu = 0.0;
  double sigma = 0.11;
  double truncation = 0.3;
  std::vector<StateVar> channels{hormone_vars().begin(), hormone_vars().end()};

  void validate() const;
};

/// Plant-side multipliers; the controller keeps its own parameters.
struct MismatchSpec {
  double G_D1 = 1.15;
  double G_T3 = 1.15;
  double G_D2 = 1.05;

  static MismatchSpec identity() { return {1.0, 1.0, 1.0}; }
  void validate() const;
};

struct AdherenceEvent {
  int day = 0;
  double factor = 1.0;  // 0 forgotten, 2 doubled

  friend bool operator==(const AdherenceEvent &, const AdherenceEvent &) = default;
};

/// Forgotten on days 4, 12, 34; doubled on days 13, 26.
std::vector<AdherenceEvent> default_adherence();

struct ScenarioSpec {
  IodideRegime regime = IodideRegime::Normal;
  bool disturbed = false;
  NoiseSpec noise;
  MismatchSpec mismatch;
  std::vector<AdherenceEvent> adherence = default_adherence();
  int duration_days = 60;
  double gt_factor = 2.0;
  std::uint64_t seed = 20240601;
  /// Euthyroid controller-side parameters. Its TPO curve should match `regime`.
  ModelParameters model = ModelParameters::nominal(IodideRegime::Normal);
  IntegratorConfig integrator;
  /// Target and q are filled in by run_scenario; q stays as given when any
  /// entry is positive.
  MpcProblem mpc;

  static ScenarioSpec preset(IodideRegime regime, bool disturbed);
  void validate() const;
};

// ---------------------------------------------------------------------------
// Disturbances
// ---------------------------------------------------------------------------

/// Independent stream for one (seed, day, channel) triple.
std::mt19937_64 noise_stream(std::uint64_t seed, int day, std::size_t channel);

/// Uniform in (0, 1) from 53 random bits.
double uniform_open(std::mt19937_64 &rng);
/// Standard normal by the Marsaglia polar method.
double standard_normal(std::mt19937_64 &rng);
/// mu + sigma * N(0, 1), redrawn until |e - mu| <= truncation.
double truncated_gaussian(std::mt19937_64 &rng, const NoiseSpec &spec);

SystemState apply_measurement_noise(const SystemState &true_state, const NoiseSpec &spec,
                                    std::uint64_t seed, int day);

ModelParameters build_mismatched_plant(const ModelParameters &nominal, const MismatchSpec &spec);

/// Throws ScenarioError for a negative dose or two events on one day.
double apply_adherence(double planned_mg, int day, const std::vector<AdherenceEvent> &events);

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

struct DayRecord {
  int day = 0;
  double planned_mg = 0.0;
  double administered_mg = 0.0;
  SystemState measured;
  SystemState true_state;  // at the start of the day
  DosePlan plan;
  bool descent = true;     // plan objective <= warm start objective + 1e-12
};

struct FailureRecord {
  std::string module;
  std::string message;
  int day = 0;
  double time_h = 0.0;
};

struct ClosedLoopTrace {
  ScenarioSpec spec;
  SystemState target;
  SteadyStateResult initial;
  ModelParameters controller_model;
  ModelParameters plant_model;
  std::vector<DayRecord> days;
  Trajectory trajectory;
  std::optional<FailureRecord> failure;

  bool complete() const { return !failure; }
  /// Day whose dose was taken during [24 d, 24 (d + 1)); the final sample
  /// belongs to the last day.
  std::optional<std::size_t> day_of(double t_h) const;
  double cumulative_administered_mg(int through_day) const;
};

ClosedLoopTrace run_scenario(const ScenarioSpec &spec);

/// Runs independent scenarios on at most `max_threads` threads.
std::vector<ClosedLoopTrace> run_scenarios(const std::vector<ScenarioSpec> &specs,
                                           unsigned max_threads);
/// THYROMPC_THREADS if set and positive, else hardware concurrency.
unsigned thread_cap_from_env();

// ---------------------------------------------------------------------------
// Analysis on the true trajectory
// ---------------------------------------------------------------------------

/// max over hormone channels of |x_i / target_i - 1|.
double worst_relative_deviation(const SystemState &x, const SystemState &target);

/// Earliest recorded time t* >= from_h after which every recorded sample
/// stays within the band; nullopt when the final sample is outside.
std::optional<double> band_entry_time(const Trajectory &traj, const SystemState &target,
                                      double band, double from_h = 0.0);

}  // namespace thyrompc
