#include "thyrompc/io.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace thyrompc {

using nlohmann::json;

namespace {

class Reader {
public:
  Reader(const json &node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object())
      throw ConfigError(path_ + ": expected an object");
  }

  ~Reader() = default;
  Reader(const Reader &) = delete;
  Reader &operator=(const Reader &) = delete;

  bool has(const std::string &key) {
    if (!node_.contains(key))
      return false;
    seen_.insert(key);
    return true;
  }

  const json &at(const std::string &key) {
    seen_.insert(key);
    return node_.at(key);
  }

  std::string where(const std::string &key) const { return path_ + "." + key; }

  void number(const std::string &key, double &out) {
    if (!has(key))
      return;
    const json &v = node_.at(key);
    if (!v.is_number())
      throw ConfigError(where(key) + ": expected a number");
    out = v.get<double>();
  }

  void integer(const std::string &key, int &out) {
    if (!has(key))
      return;
    const json &v = node_.at(key);
    if (!v.is_number_integer())
      throw ConfigError(where(key) + ": expected an integer");
    const auto raw = v.get<std::int64_t>();
    if (raw < std::numeric_limits<int>::min() || raw > std::numeric_limits<int>::max())
      throw ConfigError(where(key) + ": out of range");
    out = static_cast<int>(raw);
  }

  void unsigned64(const std::string &key, std::uint64_t &out) {
    if (!has(key))
      return;
    const json &v = node_.at(key);
    if (v.is_number_unsigned())
      out = v.get<std::uint64_t>();
    else if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
      out = static_cast<std::uint64_t>(v.get<std::int64_t>());
    else
      throw ConfigError(where(key) + ": expected a nonnegative integer");
  }

  void boolean(const std::string &key, bool &out) {
    if (!has(key))
      return;
    const json &v = node_.at(key);
    if (!v.is_boolean())
      throw ConfigError(where(key) + ": expected true or false");
    out = v.get<bool>();
  }

  void string(const std::string &key, std::string &out) {
    if (!has(key))
      return;
    const json &v = node_.at(key);
    if (!v.is_string())
      throw ConfigError(where(key) + ": expected a string");
    out = v.get<std::string>();
  }

  void finish() const {
    for (const auto &[key, value] : node_.items())
      if (!seen_.count(key))
        throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

private:
  const json &node_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<int> int_list(const json &v, const std::string &where) {
  if (!v.is_array())
    throw ConfigError(where + ": expected an array of integers");
  std::vector<int> out;
  for (const auto &e : v) {
    if (!e.is_number_integer())
      throw ConfigError(where + ": expected an array of integers");
    out.push_back(e.get<int>());
  }
  return out;
}

StateVar state_var(const json &v, const std::string &where) {
  if (!v.is_string())
    throw ConfigError(where + ": expected a state name");
  const auto s = state_from_name(v.get<std::string>());
  if (!s)
    throw ConfigError(where + ": unknown state '" + v.get<std::string>() + "'");
  return *s;
}

void parse_model(const json &node, ModelParameters &m) {
  Reader r(node, "model");
  r.number("G_T", m.G_T);
  r.number("D_T", m.D_T);
  r.number("G_D1", m.G_D1);
  r.number("G_D2", m.G_D2);
  r.number("G_T3", m.G_T3);
  if (r.has("pk")) {
    Reader p(r.at("pk"), "model.pk");
    p.number("bioavailability", m.pk.bioavailability);
    p.number("volume_l", m.pk.volume_l);
    p.number("k_a", m.pk.k_a);
    p.number("k_e", m.pk.k_e);
    p.finish();
  }
  if (r.has("filter")) {
    Reader f(r.at("filter"), "model.filter");
    f.number("a0", m.filter.a0);
    f.number("a1", m.filter.a1);
    f.number("b0", m.filter.b0);
    f.number("b1", m.filter.b1);
    f.number("time_scale", m.filter.time_scale);
    f.finish();
  }
  if (r.has("tpo")) {
    Reader t(r.at("tpo"), "model.tpo");
    t.number("c0", m.tpo.c0);
    t.number("c1", m.tpo.c1);
    t.number("c2", m.tpo.c2);
    t.number("c3", m.tpo.c3);
    t.finish();
  }
  if (r.has("base")) {
    Reader b(r.at("base"), "model.base");
    for (const auto &info : base_constant_table())
      b.number(std::string(info.name), m.base.*info.member);
    b.finish();
  }
  r.finish();
}

void parse_solver(const json &node, SolverOptions &s) {
  Reader r(node, "mpc.solver");
  if (r.has("method")) {
    std::string method;
    r.string("method", method);
    if (method == "newton")
      s.method = SolverMethod::Newton;
    else if (method == "gauss-newton")
      s.method = SolverMethod::GaussNewton;
    else if (method == "spectral-gradient")
      s.method = SolverMethod::SpectralGradient;
    else
      throw ConfigError("mpc.solver.method: expected \"newton\", \"gauss-newton\" or \"spectral-gradient\"");
  }
  r.integer("max_iterations", s.max_iterations);
  r.integer("max_backtracks", s.max_backtracks);
  r.number("armijo", s.armijo);
  r.number("step_tolerance", s.step_tolerance);
  r.number("relative_decrease_tolerance", s.relative_decrease_tolerance);
  r.number("absolute_decrease_tolerance", s.absolute_decrease_tolerance);
  r.integer("stall_iterations", s.stall_iterations);
  r.boolean("screen_constant_plans", s.screen_constant_plans);
  r.integer("screen_octaves", s.screen_octaves);
  r.integer("screen_per_octave", s.screen_per_octave);
  r.number("initial_damping", s.initial_damping);
  r.number("minimum_damping", s.minimum_damping);
  r.number("difference_step", s.difference_step);
  r.number("eigenvalue_floor", s.eigenvalue_floor);
  r.finish();
}

void parse_mpc(const json &node, MpcProblem &p) {
  Reader r(node, "mpc");
  r.integer("horizon", p.horizon);
  r.number("u_min", p.u_min);
  r.number("u_max", p.u_max);
  r.number("r_du", p.weights.r_du);
  r.number("r_u", p.weights.r_u);
  if (r.has("q")) {
    const json &q = r.at("q");
    if (q.is_string()) {
      if (q.get<std::string>() != "relative")
        throw ConfigError("mpc.q: expected \"relative\" or an object of weights");
      p.weights.q.fill(0.0);
    } else {
      Reader qr(q, "mpc.q");
      p.weights.q.fill(0.0);
      for (StateVar v : all_state_vars())
        qr.number(std::string(state_name(v)), p.weights.q[index(v)]);
      qr.finish();
    }
  }
  r.number("rollout_step_h", p.rollout_step_h);
  r.number("quantum_mg", p.quantum_mg);
  if (r.has("solver"))
    parse_solver(r.at("solver"), p.solver);
  r.finish();
}

void parse_scenario(const json &node, RunConfig &cfg, const json *model_node) {
  ScenarioSpec &s = cfg.scenario;
  Reader r(node, "scenario");
  std::string iodide(regime_name(s.regime));
  r.string("iodide", iodide);
  const auto regime = regime_from_name(iodide);
  if (!regime)
    throw ConfigError("scenario.iodide: expected \"normal\" or \"elevated\"");
  s.regime = *regime;
  s.model = ModelParameters::nominal(s.regime);
  if (model_node)
    parse_model(*model_node, s.model);

  if (r.has("runs")) {
    const json &runs = r.at("runs");
    if (!runs.is_array() || runs.empty())
      throw ConfigError("scenario.runs: expected a nonempty array");
    cfg.run_nominal = cfg.run_disturbed = false;
    for (const auto &e : runs) {
      const std::string name = e.is_string() ? e.get<std::string>() : "";
      if (name == "nominal")
        cfg.run_nominal = true;
      else if (name == "disturbed")
        cfg.run_disturbed = true;
      else
        throw ConfigError("scenario.runs: entries must be \"nominal\" or \"disturbed\"");
    }
  }
  r.integer("duration_days", s.duration_days);
  r.number("gt_factor", s.gt_factor);
  r.unsigned64("seed", s.seed);
  if (r.has("noise")) {
    Reader n(r.at("noise"), "scenario.noise");
    n.number("mu", s.noise.mu);
    n.number("sigma", s.noise.sigma);
    n.number("truncation", s.noise.truncation);
    if (n.has("channels")) {
      const json &ch = n.at("channels");
      if (!ch.is_array())
        throw ConfigError("scenario.noise.channels: expected an array of state names");
      s.noise.channels.clear();
      for (const auto &e : ch)
        s.noise.channels.push_back(state_var(e, "scenario.noise.channels"));
    }
    n.finish();
  }
  if (r.has("mismatch")) {
    Reader m(r.at("mismatch"), "scenario.mismatch");
    m.number("G_D1", s.mismatch.G_D1);
    m.number("G_T3", s.mismatch.G_T3);
    m.number("G_D2", s.mismatch.G_D2);
    m.finish();
  }
  if (r.has("adherence")) {
    Reader a(r.at("adherence"), "scenario.adherence");
    std::vector<int> forget, twice;
    for (const auto &e : s.adherence)
      (e.factor == 0.0 ? forget : twice).push_back(e.day);
    if (a.has("forget"))
      forget = int_list(a.at("forget"), "scenario.adherence.forget");
    if (a.has("double"))
      twice = int_list(a.at("double"), "scenario.adherence.double");
    a.finish();
    s.adherence.clear();
    for (int d : forget)
      s.adherence.push_back({d, 0.0});
    for (int d : twice)
      s.adherence.push_back({d, 2.0});
    std::sort(s.adherence.begin(), s.adherence.end(),
              [](const AdherenceEvent &x, const AdherenceEvent &y) { return x.day < y.day; });
  }
  r.finish();
}

}  // namespace

std::vector<ScenarioSpec> RunConfig::scenarios() const {
  std::vector<ScenarioSpec> out;
  if (run_nominal) {
    out.push_back(scenario);
    out.back().disturbed = false;
  }
  if (run_disturbed) {
    out.push_back(scenario);
    out.back().disturbed = true;
  }
  return out;
}

RunConfig parse_config(const json &doc) {
  RunConfig cfg;
  Reader top(doc, "config");
  const json *model_node = top.has("model") ? &top.at("model") : nullptr;
  if (top.has("scenario")) {
    parse_scenario(top.at("scenario"), cfg, model_node);
  } else {
    cfg.scenario.model = ModelParameters::nominal(cfg.scenario.regime);
    if (model_node)
      parse_model(*model_node, cfg.scenario.model);
  }
  if (top.has("integrator")) {
    Reader r(top.at("integrator"), "integrator");
    r.number("step_h", cfg.scenario.integrator.step_h);
    r.number("record_interval_h", cfg.scenario.integrator.record_interval_h);
    r.finish();
  }
  if (top.has("mpc"))
    parse_mpc(top.at("mpc"), cfg.scenario.mpc);
  if (top.has("output")) {
    Reader r(top.at("output"), "output");
    r.string("dir", cfg.output.dir);
    r.boolean("csv", cfg.output.csv);
    r.boolean("json", cfg.output.json);
    r.boolean("summary", cfg.output.summary);
    r.finish();
  }
  top.has("meta");
  top.finish();

  try {
    cfg.scenario.validate();
  } catch (const ConfigError &) {
    throw;
  } catch (const std::exception &e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot read config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_config(doc);
}

json config_to_json(const RunConfig &cfg) {
  const ScenarioSpec &s = cfg.scenario;
  const ModelParameters &m = s.model;

  json runs = json::array();
  if (cfg.run_nominal)
    runs.push_back("nominal");
  if (cfg.run_disturbed)
    runs.push_back("disturbed");
  json channels = json::array();
  for (StateVar v : s.noise.channels)
    channels.push_back(std::string(state_name(v)));
  json forget = json::array(), twice = json::array();
  for (const auto &e : s.adherence)
    (e.factor == 0.0 ? forget : twice).push_back(e.day);

  json base = json::object();
  for (const auto &info : base_constant_table())
    base[std::string(info.name)] = m.base.*info.member;

  json q;
  if (std::none_of(s.mpc.weights.q.begin(), s.mpc.weights.q.end(), [](double v) { return v > 0.0; })) {
    q = "relative";
  } else {
    q = json::object();
    for (StateVar v : all_state_vars())
      q[std::string(state_name(v))] = s.mpc.weights.q[index(v)];
  }
  const SolverOptions &so = s.mpc.solver;

  return json{
      {"scenario",
       {{"iodide", std::string(regime_name(s.regime))},
        {"runs", runs},
        {"duration_days", s.duration_days},
        {"gt_factor", s.gt_factor},
        {"seed", s.seed},
        {"noise",
         {{"mu", s.noise.mu},
          {"sigma", s.noise.sigma},
          {"truncation", s.noise.truncation},
          {"channels", channels}}},
        {"mismatch", {{"G_D1", s.mismatch.G_D1}, {"G_T3", s.mismatch.G_T3}, {"G_D2", s.mismatch.G_D2}}},
        {"adherence", {{"forget", forget}, {"double", twice}}}}},
      {"model",
       {{"G_T", m.G_T},
        {"D_T", m.D_T},
        {"G_D1", m.G_D1},
        {"G_D2", m.G_D2},
        {"G_T3", m.G_T3},
        {"pk",
         {{"bioavailability", m.pk.bioavailability},
          {"volume_l", m.pk.volume_l},
          {"k_a", m.pk.k_a},
          {"k_e", m.pk.k_e}}},
        {"filter",
         {{"a0", m.filter.a0},
          {"a1", m.filter.a1},
          {"b0", m.filter.b0},
          {"b1", m.filter.b1},
          {"time_scale", m.filter.time_scale}}},
        {"tpo", {{"c0", m.tpo.c0}, {"c1", m.tpo.c1}, {"c2", m.tpo.c2}, {"c3", m.tpo.c3}}},
        {"base", base}}},
      {"integrator",
       {{"step_h", s.integrator.step_h}, {"record_interval_h", s.integrator.record_interval_h}}},
      {"mpc",
       {{"horizon", s.mpc.horizon},
        {"u_min", s.mpc.u_min},
        {"u_max", s.mpc.u_max},
        {"r_du", s.mpc.weights.r_du},
        {"r_u", s.mpc.weights.r_u},
        {"q", q},
        {"rollout_step_h", s.mpc.rollout_step_h},
        {"quantum_mg", s.mpc.quantum_mg},
        {"solver",
         {{"method", std::string(solver_method_name(so.method))},
          {"max_iterations", so.max_iterations},
          {"max_backtracks", so.max_backtracks},
          {"armijo", so.armijo},
          {"step_tolerance", so.step_tolerance},
          {"relative_decrease_tolerance", so.relative_decrease_tolerance},
          {"absolute_decrease_tolerance", so.absolute_decrease_tolerance},
          {"stall_iterations", so.stall_iterations},
          {"screen_constant_plans", so.screen_constant_plans},
          {"screen_octaves", so.screen_octaves},
          {"screen_per_octave", so.screen_per_octave},
          {"initial_damping", so.initial_damping},
          {"minimum_damping", so.minimum_damping},
          {"difference_step", so.difference_step},
          {"eigenvalue_floor", so.eigenvalue_floor}}}}},
      {"output",
       {{"dir", cfg.output.dir},
        {"csv", cfg.output.csv},
        {"json", cfg.output.json},
        {"summary", cfg.output.summary}}},
  };
}

json state_to_json(const SystemState &s) {
  json out = json::object();
  for (StateVar v : all_state_vars())
    out[std::string(state_name(v))] = s[v];
  return out;
}

SystemState state_from_json(const json &doc) {
  const json &node = doc.is_object() && doc.contains("state") ? doc.at("state") : doc;
  if (!node.is_object())
    throw ConfigError("state: expected an object");
  SystemState s;
  for (StateVar v : all_state_vars()) {
    const std::string key(state_name(v));
    if (!node.contains(key))
      throw ConfigError("state: missing '" + key + "'");
    if (!node.at(key).is_number())
      throw ConfigError("state." + key + ": expected a number");
    s[v] = node.at(key).get<double>();
  }
  for (const auto &[key, value] : node.items())
    if (!state_from_name(key))
      throw ConfigError("state: unknown key '" + key + "'");
  if (&node != &doc)
    for (const auto &[key, value] : doc.items())
      if (key != "state" && key != "u_prev_mg")
        throw ConfigError("state file: unknown key '" + key + "'");
  try {
    s.validate();
  } catch (const std::exception &e) {
    throw ConfigError(std::string("state: ") + e.what());
  }
  return s;
}

}  // namespace thyrompc
