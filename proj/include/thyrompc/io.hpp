#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "thyrompc/scenario.hpp"

namespace thyrompc {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct OutputOptions {
  std::string dir = "out";
  bool csv = true;
  bool json = true;     // meta.json
  bool summary = true;  // summary.json
};

/// Everything `simulate` needs. `scenario.disturbed` is ignored; `runs`
/// selects which of the nominal and disturbed variants execute.
struct RunConfig {
  ScenarioSpec scenario;
  bool run_nominal = true;
  bool run_disturbed = true;
  OutputOptions output;

  std::vector<ScenarioSpec> scenarios() const;
};

/// Strict parse: unknown keys, wrong types and invalid values throw
/// ConfigError. Missing keys keep their defaults. A top-level "meta" object
/// is accepted and ignored so that meta.json can be fed back in.
RunConfig parse_config(const nlohmann::json &doc);
RunConfig load_config(const std::filesystem::path &path);

/// Fully resolved config in the same schema parse_config accepts.
nlohmann::json config_to_json(const RunConfig &cfg);

nlohmann::json state_to_json(const SystemState &s);
/// Either the nine named entries or {"state": {...}}; all nine required.
SystemState state_from_json(const nlohmann::json &doc);

// ---------------------------------------------------------------------------
// Trace tables
// ---------------------------------------------------------------------------

struct TraceTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  friend bool operator==(const TraceTable &, const TraceTable &) = default;
};

std::vector<std::string> trace_columns();
TraceTable trace_table(const ClosedLoopTrace &trace);

/// Comma separated, header row, 17 significant digits.
void write_trace_csv(std::ostream &os, const TraceTable &table);
TraceTable read_trace_csv(std::istream &is);

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct SummaryReport {
  std::string name;
  StateVector final_relative_deviation{};  // x_i / target_i - 1 at the last sample
  double worst_final_deviation = 0.0;
  double cumulative_dose_mg = 0.0;
  double band = 0.05;
  std::optional<double> days_to_band;
  /// Days after the last forgotten dose until the band is re-entered for good.
  std::optional<int> recovery_from_day;
  std::optional<double> recovery_days;
  int solver_iterations = 0;
  int solver_evaluations = 0;
  int converged_days = 0;
  int planned_days = 0;
  bool descent_every_day = true;
  std::optional<FailureRecord> failure;
};

SummaryReport summarize(const ClosedLoopTrace &trace, std::string name, double band = 0.05);
nlohmann::json summary_to_json(const SummaryReport &r);

nlohmann::json meta_json(const RunConfig &cfg);

std::string run_name(const ScenarioSpec &spec);

}  // namespace thyrompc
