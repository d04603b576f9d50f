#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "thyrompc/io.hpp"

namespace fs = std::filesystem;
using namespace thyrompc;
using nlohmann::json;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::optional<RunConfig> load_or_report(const std::string &path) {
  try {
    return load_config(path);
  } catch (const std::exception &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return std::nullopt;
  }
}

void write_json(const fs::path &path, const json &doc) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

int cmd_simulate(const std::string &config_path, const std::optional<std::string> &out_dir,
                 const std::optional<std::uint64_t> &seed) {
  auto cfg = load_or_report(config_path);
  if (!cfg)
    return kConfigError;
  if (seed)
    cfg->scenario.seed = *seed;
  if (out_dir)
    cfg->output.dir = *out_dir;

  std::vector<ClosedLoopTrace> traces;
  const auto specs = cfg->scenarios();
  try {
    traces = run_scenarios(specs, thread_cap_from_env());
  } catch (const SimError &e) {
    std::cerr << "sim-engine: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const MpcError &e) {
    std::cerr << "mpc-controller: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception &e) {
    std::cerr << "scenario-harness: " << e.what() << '\n';
    return kRuntimeError;
  }

  bool failed = false;
  try {
    const fs::path dir(cfg->output.dir);
    fs::create_directories(dir);
    json summaries = json::array();
    for (const auto &trace : traces) {
      const std::string name = run_name(trace.spec);
      if (cfg->output.csv) {
        fs::create_directories(dir / name);
        std::ofstream csv(dir / name / "trace.csv");
        if (!csv)
          throw std::runtime_error("cannot write " + (dir / name / "trace.csv").string());
        write_trace_csv(csv, trace_table(trace));
      }
      const SummaryReport r = summarize(trace, name);
      summaries.push_back(summary_to_json(r));
      std::printf("%-18s cumulative %.6g mg, worst final deviation %.4f\n", name.c_str(),
                  r.cumulative_dose_mg, r.worst_final_deviation);
      if (trace.failure) {
        failed = true;
        std::cerr << trace.failure->module << ": " << trace.failure->message << " (day "
                  << trace.failure->day << ")\n";
      }
    }
    if (cfg->output.summary)
      write_json(dir / "summary.json", json{{"runs", summaries}});
    if (cfg->output.json)
      write_json(dir / "meta.json", meta_json(*cfg));
  } catch (const std::exception &e) {
    std::cerr << "cli-io: " << e.what() << '\n';
    return kRuntimeError;
  }
  return failed ? kRuntimeError : 0;
}

json steady_json(const SteadyStateResult &r) {
  return {{"state", state_to_json(r.state)},
          {"residual_norm", r.residual_norm},
          {"method", std::string(method_name(r.method))},
          {"newton_iterations", r.newton_iterations}};
}

int cmd_steady_state(const std::string &config_path) {
  const auto cfg = load_or_report(config_path);
  if (!cfg)
    return kConfigError;
  try {
    const ScenarioSpec &s = cfg->scenario;
    const ModelParameters hyper = s.model.hyperthyroid(s.gt_factor);
    const json doc{
        {"iodide", std::string(regime_name(s.regime))},
        {"gt_factor", s.gt_factor},
        {"euthyroid", steady_json(find_steady_state(s.model))},
        {"hyperthyroid", steady_json(find_steady_state(hyper))},
        {"hyperthyroid_mismatched",
         steady_json(find_steady_state(build_mismatched_plant(hyper, s.mismatch)))},
    };
    std::cout << doc.dump(2) << '\n';
  } catch (const std::exception &e) {
    std::cerr << "sim-engine: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}

int cmd_plan_once(const std::string &state_path, const std::string &config_path) {
  const auto cfg = load_or_report(config_path);
  if (!cfg)
    return kConfigError;
  SystemState measured;
  double u_prev = 0.0;
  try {
    std::ifstream in(state_path);
    if (!in)
      throw ConfigError("cannot read state file '" + state_path + "'");
    const json doc = json::parse(in);
    measured = state_from_json(doc);
    if (doc.is_object() && doc.contains("u_prev_mg")) {
      if (!doc.at("u_prev_mg").is_number())
        throw ConfigError("state file: u_prev_mg must be a number");
      u_prev = doc.at("u_prev_mg").get<double>();
    }
  } catch (const std::exception &e) {
    std::cerr << "state error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    const ScenarioSpec &s = cfg->scenario;
    MpcProblem problem = s.mpc;
    problem.target = find_steady_state(s.model).state;
    if (std::none_of(problem.weights.q.begin(), problem.weights.q.end(),
                     [](double q) { return q > 0.0; }))
      problem.weights =
          ControlWeights::relative_to(problem.target, problem.weights.r_du, problem.weights.r_u);
    const ModelParameters model = s.model.hyperthyroid(s.gt_factor);
    const DosePlan p = plan(measured, u_prev, problem, model, PendingDoses{});
    const std::vector<double> zero(static_cast<std::size_t>(problem.horizon), 0.0);
    const json doc{
        {"doses_mg", p.doses},
        {"objective", p.objective},
        {"zero_plan_objective", objective(zero, measured, u_prev, problem, model, PendingDoses{})},
        {"iterations", p.iterations},
        {"evaluations", p.evaluations},
        {"converged", p.converged},
    };
    std::cout << doc.dump(2) << '\n';
  } catch (const std::exception &e) {
    std::cerr << "mpc-controller: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Closed-loop methimazole dosing for the pituitary-thyroid loop"};
  app.require_subcommand(1);

  std::string config_path, state_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;

  auto *sim = app.add_subcommand("simulate", "Run the nominal and disturbed closed loops");
  sim->add_option("--config", config_path, "JSON config")->required();
  sim->add_option("--out", out_dir, "Output directory");
  sim->add_option("--seed", seed, "Noise seed");

  auto *ss = app.add_subcommand("steady-state", "Print euthyroid and hyperthyroid steady states");
  ss->add_option("--config", config_path, "JSON config")->required();

  auto *po = app.add_subcommand("plan-once", "Print one open-loop dose plan");
  po->add_option("--state", state_path, "JSON state file")->required();
  po->add_option("--config", config_path, "JSON config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  if (*sim)
    return cmd_simulate(config_path, out_dir, seed);
  if (*ss)
    return cmd_steady_state(config_path);
  return cmd_plan_once(state_path, config_path);
}
