#include "thyrompc/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

namespace thyrompc {

using nlohmann::json;

std::string run_name(const ScenarioSpec &spec) {
  return std::string(regime_name(spec.regime)) + (spec.disturbed ? "-disturbed" : "-nominal");
}

std::vector<std::string> trace_columns() {
  std::vector<std::string> cols{"time_h"};
  for (const auto &c : trajectory_channel_names())
    cols.push_back(c);
  cols.emplace_back("planned_dose");
  cols.emplace_back("administered_dose");
  return cols;
}

TraceTable trace_table(const ClosedLoopTrace &trace) {
  TraceTable t;
  t.columns = trace_columns();
  const Trajectory &traj = trace.trajectory;
  t.rows.reserve(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    std::vector<double> row;
    row.reserve(t.columns.size());
    row.push_back(traj.times_h[i]);
    for (double v : traj.states[i].values)
      row.push_back(v);
    row.push_back(traj.plasma[i]);
    row.push_back(traj.mmi_th[i]);
    row.push_back(traj.tpo_a[i]);
    const auto d = trace.day_of(traj.times_h[i]);
    row.push_back(d ? trace.days[*d].planned_mg : 0.0);
    row.push_back(d ? trace.days[*d].administered_mg : 0.0);
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_trace_csv(std::ostream &os, const TraceTable &table) {
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    os << (c ? "," : "") << table.columns[c];
  os << '\n';
  char buf[32];
  for (const auto &row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

TraceTable read_trace_csv(std::istream &is) {
  TraceTable t;
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("trace csv: missing header");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      t.columns.push_back(cell);
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char *end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw std::runtime_error("trace csv: bad number on line " + std::to_string(lineno));
      row.push_back(v);
    }
    if (row.size() != t.columns.size())
      throw std::runtime_error("trace csv: wrong column count on line " + std::to_string(lineno));
    t.rows.push_back(std::move(row));
  }
  return t;
}

SummaryReport summarize(const ClosedLoopTrace &trace, std::string name, double band) {
  SummaryReport r;
  r.name = std::move(name);
  r.band = band;
  r.failure = trace.failure;
  if (!trace.trajectory.empty()) {
    const SystemState &fin = trace.trajectory.final_state();
    for (StateVar v : all_state_vars())
      r.final_relative_deviation[index(v)] =
          trace.target[v] != 0.0 ? fin[v] / trace.target[v] - 1.0 : 0.0;
    r.worst_final_deviation = worst_relative_deviation(fin, trace.target);
    if (auto t = band_entry_time(trace.trajectory, trace.target, band))
      r.days_to_band = *t / 24.0;
  }
  for (const auto &d : trace.days) {
    r.cumulative_dose_mg += d.administered_mg;
    r.solver_iterations += d.plan.iterations;
    r.solver_evaluations += d.plan.evaluations;
    r.converged_days += d.plan.converged ? 1 : 0;
    r.descent_every_day = r.descent_every_day && d.descent;
  }
  r.planned_days = static_cast<int>(trace.days.size());
  if (trace.spec.disturbed) {
    for (const auto &e : trace.spec.adherence)
      if (e.factor == 0.0 && e.day < trace.spec.duration_days)
        r.recovery_from_day = std::max(r.recovery_from_day.value_or(e.day), e.day);
    if (r.recovery_from_day && !trace.trajectory.empty()) {
      const double from = 24.0 * *r.recovery_from_day;
      if (auto t = band_entry_time(trace.trajectory, trace.target, band, from))
        r.recovery_days = (*t - from) / 24.0;
    }
  }
  return r;
}

json summary_to_json(const SummaryReport &r) {
  json dev = json::object();
  for (StateVar v : all_state_vars())
    dev[std::string(state_name(v))] = r.final_relative_deviation[index(v)];
  auto opt = [](const auto &o) { return o ? json(*o) : json(nullptr); };
  json out{{"name", r.name},
           {"final_relative_deviation", dev},
           {"worst_final_deviation", r.worst_final_deviation},
           {"cumulative_dose_mg", r.cumulative_dose_mg},
           {"band", r.band},
           {"days_to_band", opt(r.days_to_band)},
           {"recovery_from_day", opt(r.recovery_from_day)},
           {"recovery_days", opt(r.recovery_days)},
           {"solver",
            {{"iterations", r.solver_iterations},
             {"evaluations", r.solver_evaluations},
             {"converged_days", r.converged_days},
             {"planned_days", r.planned_days},
             {"descent_every_day", r.descent_every_day}}},
           {"failure", nullptr}};
  if (r.failure)
    out["failure"] = {{"module", r.failure->module},
                      {"message", r.failure->message},
                      {"day", r.failure->day},
                      {"time_h", r.failure->time_h}};
  return out;
}

json meta_json(const RunConfig &cfg) {
  json doc = config_to_json(cfg);
  json constants = json::array();
  for (const auto &info : base_constant_table())
    constants.push_back({{"name", std::string(info.name)},
                         {"value", cfg.scenario.model.base.*info.member},
                         {"unit", std::string(info.unit)},
                         {"note", std::string(info.note)}});
  json runs = json::array();
  for (const auto &s : cfg.scenarios())
    runs.push_back(run_name(s));
  doc["meta"] = {
      {"program", "thyrompc"},
      {"seed", cfg.scenario.seed},
      {"runs", runs},
      {"tpo_preset", std::string(regime_name(cfg.scenario.regime))},
      {"filter_time_units", "coefficients per second, time_scale seconds per hour"},
      {"constants", constants},
      {"reproduce", "thyrompc simulate --config meta.json"},
  };
  return doc;
}

}  // namespace thyrompc
