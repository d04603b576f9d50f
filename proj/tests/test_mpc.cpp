#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "thyrompc/mpc.hpp"

using namespace thyrompc;

namespace {

struct Setup {
  ModelParameters nominal;
  ModelParameters hyper;
  SystemState target;
  MpcProblem problem;
};

Setup make_setup(IodideRegime regime = IodideRegime::Normal) {
  Setup s;
  s.nominal = ModelParameters::nominal(regime);
  s.hyper = s.nominal.hyperthyroid(2.0);
  s.target = find_steady_state(s.nominal).state;
  s.problem.target = s.target;
  s.problem.weights = ControlWeights::relative_to(s.target);
  return s;
}

// Stage costs summed over a trajectory from the ordinary integrator.
double stage_sum(std::span<const double> plan, const SystemState &measured, double u_prev,
                 const MpcProblem &problem, const ModelParameters &params,
                 const PendingDoses &pending) {
  DoseSchedule schedule = pending;
  for (std::size_t k = 0; k < plan.size(); ++k)
    schedule.add({24.0 * static_cast<double>(k), plan[k]});
  const double h = problem.rollout_step_h;
  const Trajectory traj =
      integrate(measured, params, schedule, 24.0 * static_cast<double>(plan.size()), {h, 24.0});
  double cost = 0.0;
  double last = u_prev;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const SystemState &x = traj.states[k + 1];
    for (std::size_t i = 0; i < kStateSize; ++i) {
      const double d = x.values[i] - problem.target.values[i];
      cost += problem.weights.q[i] * d * d;
    }
    const double u = plan[k];
    cost += problem.weights.r_du * (u - last) * (u - last) + problem.weights.r_u * u * u;
    last = u;
  }
  return cost;
}

// Plant sitting on its periodic orbit under a constant daily dose, with a
// month of that dose as pending tails.
struct Maintained {
  SystemState state;
  PendingDoses pending;
  double dose;
};

Maintained maintained(const Setup &s, double dose) {
  Maintained m;
  m.dose = dose;
  m.state = find_steady_state(s.hyper, dose).state;
  for (int k = 1; k <= 30; ++k)
    m.pending.add({-24.0 * k, dose});
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("zero cost at the drug-free target") {
  const Setup s = make_setup();
  const std::vector<double> zero(15, 0.0);
  CHECK(objective(zero, s.target, 0.0, s.problem, s.nominal, PendingDoses{}) <= 1e-20);
}

TEST_CASE("doubling a plan raises the input penalties") {
  Setup s = make_setup();
  const std::vector<double> a(15, 0.002);
  std::vector<double> a2(15, 0.004);
  // a negligible state weight leaves the input penalties in charge
  s.problem.weights.q.fill(0.0);
  s.problem.weights.q[index(StateVar::TSH)] = 1e-12;
  const double fa = objective(a, s.target, 0.0, s.problem, s.nominal, PendingDoses{});
  const double f2a = objective(a2, s.target, 0.0, s.problem, s.nominal, PendingDoses{});
  CHECK(f2a > fa);
}

TEST_CASE("objective equals an independent stage sum") {
  const Setup s = make_setup();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dose(0.0, 0.003);
  const Maintained m = maintained(s, 0.001);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> plan(15);
    for (auto &u : plan)
      u = dose(rng);
    const double f = objective(plan, m.state, 0.001, s.problem, s.hyper, m.pending);
    const double oracle = stage_sum(plan, m.state, 0.001, s.problem, s.hyper, m.pending);
    CHECK(f == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("adjoint gradient agrees with central differences") {
  for (auto regime : {IodideRegime::Normal, IodideRegime::Elevated}) {
    const Setup s = make_setup(regime);
    const double top = regime == IodideRegime::Normal ? 0.003 : 10.0;
    const SystemState x0 = find_steady_state(s.hyper).state;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dose(0.0, top);
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> plan(15);
      for (auto &u : plan)
        u = dose(rng);
      const ObjectiveGradient fg =
          objective_gradient(plan, x0, 0.5 * top, s.problem, s.hyper, PendingDoses{});
      // the elevated-iodide sigmoid switches over ~1e-4 mg, so the step is tiny
      for (std::size_t k = 0; k < plan.size(); ++k) {
        const double h = 1e-7 * top;
        std::vector<double> up = plan, dn = plan;
        up[k] += h;
        dn[k] = std::max(0.0, dn[k] - h);
        const double fd = (objective(up, x0, 0.5 * top, s.problem, s.hyper, PendingDoses{}) -
                           objective(dn, x0, 0.5 * top, s.problem, s.hyper, PendingDoses{})) /
                          (up[k] - dn[k]);
        CAPTURE(k);
        CHECK(std::abs(fd - fg.gradient[k]) <= 1e-4 * std::abs(fg.gradient[k]));
      }
      CHECK(fg.value == doctest::Approx(objective(plan, x0, 0.5 * top, s.problem, s.hyper,
                                                  PendingDoses{}))
                            .epsilon(1e-14));
    }
  }
}

TEST_CASE("degenerate dose range returns the zero plan") {
  Setup s = make_setup();
  s.problem.u_max = 0.0;
  const SystemState x0 = find_steady_state(s.hyper).state;
  const DosePlan p = plan(x0, 0.0, s.problem, s.hyper, PendingDoses{});
  CHECK(p.converged);
  for (double u : p.doses)
    CHECK(u == 0.0);
}

TEST_CASE("zero plan is optimal at the drug-free target") {
  const Setup s = make_setup();
  const DosePlan p = plan(s.target, 0.0, s.problem, s.nominal, PendingDoses{});
  const std::vector<double> zero(15, 0.0);
  CHECK(p.objective <= objective(zero, s.target, 0.0, s.problem, s.nominal, PendingDoses{}));
  CHECK(*std::max_element(p.doses.begin(), p.doses.end()) == 0.0);
}

TEST_CASE("a hyperthyroid state calls for a first dose") {
  const Setup s = make_setup();
  const SystemState x0 = find_steady_state(s.hyper).state;
  const DosePlan p = plan(x0, 0.0, s.problem, s.hyper, PendingDoses{});
  const std::vector<double> zero(15, 0.0);
  CHECK(p.doses.front() > 0.0);
  CHECK(p.objective < objective(zero, x0, 0.0, s.problem, s.hyper, PendingDoses{}));
  CHECK(p.objective <= p.warm_objective + 1e-12);
  CHECK(p.converged);
  for (double u : p.doses) {
    CHECK(u >= s.problem.u_min);
    CHECK(u <= s.problem.u_max);
  }
  CHECK(p.objective ==
        doctest::Approx(objective(p.doses, x0, 0.0, s.problem, s.hyper, PendingDoses{}))
            .epsilon(1e-14));
}

TEST_CASE("every solver method descends from the warm start") {
  Setup s = make_setup();
  const Maintained m = maintained(s, 0.0012);
  const DosePlan warm{std::vector<double>(15, 0.0012)};
  for (auto method :
       {SolverMethod::Newton, SolverMethod::GaussNewton, SolverMethod::SpectralGradient}) {
    s.problem.solver.method = method;
    const DosePlan p = plan(m.state, 0.0012, s.problem, s.hyper, m.pending, warm);
    CAPTURE(solver_method_name(method));
    CHECK(p.objective <= p.warm_objective + 1e-12);
    CHECK(p.warm_objective ==
          doctest::Approx(objective(std::vector<double>(15, 0.0012), m.state, 0.0012, s.problem,
                                    s.hyper, m.pending))
              .epsilon(1e-14));
  }
}

TEST_CASE("shifted warm start") {
  const std::vector<double> prev{1.0, 2.0, 3.0, 4.0};
  CHECK(shifted_warm_start(prev, 4) == std::vector<double>{2.0, 3.0, 4.0, 4.0});
  CHECK(shifted_warm_start(prev, 2) == std::vector<double>{2.0, 3.0});
  CHECK(shifted_warm_start(prev, 6) == std::vector<double>{2.0, 3.0, 4.0, 4.0, 4.0, 4.0});
  CHECK(shifted_warm_start({}, 2) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("controller bookkeeping") {
  const Setup s = make_setup();
  Controller c(s.problem, s.hyper);
  CHECK(c.next_warm_start() == std::vector<double>(15, 20.0));
  const Maintained m = maintained(s, 0.001);
  const double u0 = c.receding_step(m.state);
  REQUIRE(c.last_plan());
  CHECK(u0 == c.last_plan()->doses.front());
  CHECK(c.u_prev() == u0);
  CHECK(c.day() == 1);
  const std::vector<double> expected = shifted_warm_start(c.last_plan()->doses, 15);
  CHECK(c.next_warm_start() == expected);
  const PendingDoses pending = c.pending();
  const auto events = pending.events();
  REQUIRE(events.size() == 1);
  CHECK(events[0].t0_h == -24.0);
  CHECK(events[0].amount_mg == u0);

  const double u1 = c.receding_step(m.state);
  CHECK(c.day() == 2);
  REQUIRE(c.history().size() == 2);
  CHECK(c.history()[0] == u0);
  CHECK(c.history()[1] == u1);
  CHECK(c.pending().events()[0].t0_h == -48.0);
}

TEST_CASE("quantized doses stay on the tablet grid and inside the bounds") {
  Setup s = make_setup(IodideRegime::Elevated);
  s.problem.quantum_mg = 2.5;
  Controller c(s.problem, s.hyper);
  const SystemState x0 = find_steady_state(s.hyper).state;
  const double u = c.receding_step(x0);
  CHECK(std::fmod(u, 2.5) == 0.0);
  CHECK(u >= 0.0);
  CHECK(u <= s.problem.u_max);
}

TEST_CASE("maintenance dosing settles to a constant") {
  const Setup s = make_setup();
  const Maintained m = maintained(s, 0.00098);
  Controller c(s.problem, s.hyper);
  SystemState x = m.state;
  DoseSchedule plant = m.pending;
  std::vector<double> doses;
  for (int day = 0; day < 20; ++day) {
    const double u = c.receding_step(x);
    doses.push_back(u);
    plant.add({24.0 * day, u});
    x = propagate(x, s.hyper, PlasmaForcing(plant, s.hyper.pk), 24.0, 0.05, 24.0 * day);
  }
  std::vector<double> steps;
  for (std::size_t k = 1; k < doses.size(); ++k)
    steps.push_back(std::abs(doses[k] - doses[k - 1]));
  const double early = *std::max_element(steps.begin(), steps.begin() + 5);
  const double late = *std::max_element(steps.end() - 5, steps.end());
  CHECK(late <= 1e-3 * early);
  CHECK(late <= 1e-8);
}

TEST_CASE("replanning with an exact model keeps the overlapping plan") {
  const Setup s = make_setup();
  const Maintained m = maintained(s, 0.00098);
  Controller c(s.problem, s.hyper);
  SystemState x = m.state;
  DoseSchedule plant = m.pending;
  // let the warm start settle first
  for (int day = 0; day < 5; ++day) {
    const double u = c.receding_step(x);
    plant.add({24.0 * day, u});
    x = propagate(x, s.hyper, PlasmaForcing(plant, s.hyper.pk), 24.0, 0.05, 24.0 * day);
  }
  const std::vector<double> before = c.last_plan()->doses;
  c.receding_step(x);
  const std::vector<double> after = c.last_plan()->doses;
  const std::span<const double> tail(before.begin() + 1, before.end());
  const std::span<const double> head(after.begin(), after.end() - 1);
  // without a terminal cost the last days ripple with the horizon end
  CHECK(max_abs_diff(tail.first(4), head.first(4)) <= 1e-5 * before.front());
  CHECK(max_abs_diff(tail.first(10), head.first(10)) <= 1e-3 * before.front());
  CHECK(max_abs_diff(tail, head) <= 5e-2 * before.front());
}

TEST_CASE("argmin is invariant under a common weight scale") {
  Setup s = make_setup();
  SUBCASE("maintenance") {
    const Maintained m = maintained(s, 0.00098);
    const DosePlan base = plan(m.state, m.dose, s.problem, s.hyper, m.pending);
    REQUIRE(base.converged);
    for (double factor : {10.0, 0.3}) {
      MpcProblem scaled = s.problem;
      scaled.weights = s.problem.weights.scaled(factor);
      const DosePlan p = plan(m.state, m.dose, scaled, s.hyper, m.pending);
      CAPTURE(factor);
      CHECK(p.converged);
      CHECK(max_abs_diff(p.doses, base.doses) <= 1e-6 * m.dose);
      CHECK(p.objective / factor == doctest::Approx(base.objective).epsilon(1e-9));
    }
  }
  SUBCASE("power of two is exact") {
    const Maintained m = maintained(s, 0.0011);
    const DosePlan base = plan(m.state, m.dose, s.problem, s.hyper, m.pending);
    MpcProblem scaled = s.problem;
    scaled.weights = s.problem.weights.scaled(4.0);
    const DosePlan p = plan(m.state, m.dose, scaled, s.hyper, m.pending);
    CHECK(p.doses == base.doses);
  }
}

TEST_CASE("problem validation") {
  Setup s = make_setup();
  CHECK_NOTHROW(s.problem.validate());
  auto bad = [&](auto mutate) {
    MpcProblem p = s.problem;
    mutate(p);
    return p;
  };
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.horizon = 0; }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.u_min = 2.0, p.u_max = 1.0; }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.u_min = -1.0; }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.weights.q.fill(0.0); }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.weights.r_u = -1.0; }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.rollout_step_h = 0.07; }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.solver.armijo = 1.0; }).validate(), MpcError);
  CHECK_THROWS_AS(bad([](MpcProblem &p) { p.solver.difference_step = 0.0; }).validate(),
                  MpcError);
  CHECK_THROWS_AS(ControlWeights::relative_to(SystemState{}), MpcError);

  const std::vector<double> short_plan(3, 0.0);
  CHECK_THROWS_AS(objective(short_plan, s.target, 0.0, s.problem, s.nominal, PendingDoses{}),
                  MpcError);
  std::vector<double> negative(15, 0.0);
  negative[3] = -1.0;
  CHECK_THROWS_AS(objective(negative, s.target, 0.0, s.problem, s.nominal, PendingDoses{}),
                  MpcError);
  SystemState nan_state = s.target;
  nan_state[StateVar::TSH] = std::nan("");
  CHECK_THROWS_AS(plan(nan_state, 0.0, s.problem, s.nominal, PendingDoses{}), MpcError);
}
