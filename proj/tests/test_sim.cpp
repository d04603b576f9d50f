#include <doctest.h>

#include <cmath>
#include <limits>

#include "thyrompc/sim.hpp"

using namespace thyrompc;

namespace {

double max_relative_change(const Trajectory &traj, const SystemState &ref) {
  double worst = 0.0;
  for (const auto &s : traj.states)
    for (std::size_t i = 0; i < kStateSize; ++i)
      worst = std::max(worst, std::abs(s.values[i] - ref.values[i]) /
                                  std::max(std::abs(ref.values[i]), 1e-12));
  return worst;
}

double max_scaled_difference(const Trajectory &a, const Trajectory &b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < kStateSize; ++i) {
      const double scale = std::max(std::abs(b.states[k].values[i]), 1e-3);
      worst = std::max(worst, std::abs(a.states[k].values[i] - b.states[k].values[i]) / scale);
    }
  return worst;
}

DoseSchedule daily(double mg, int days) {
  std::vector<DoseEvent> e;
  for (int d = 0; d < days; ++d)
    e.push_back({24.0 * d, mg});
  return DoseSchedule(e);
}

}  // namespace

TEST_CASE("integrator configuration") {
  CHECK_NOTHROW(IntegratorConfig{}.validate());
  CHECK_THROWS_AS((IntegratorConfig{0.06, 1.2}).validate(), SimError);
  CHECK_THROWS_AS((IntegratorConfig{0.0, 1.0}).validate(), SimError);
  CHECK_THROWS_AS((IntegratorConfig{0.01, 0.015}).validate(), SimError);
  CHECK_NOTHROW((IntegratorConfig{0.05, 0.05}).validate());
}

TEST_CASE("trajectory grid and sample count") {
  const ModelParameters p = ModelParameters::nominal();
  const SystemState x0 = find_steady_state(p).state;
  const Trajectory t = integrate(x0, p, DoseSchedule{}, 50.0, {0.01, 2.0});
  CHECK(t.size() == 26);
  for (std::size_t i = 1; i < t.size(); ++i)
    CHECK(t.times_h[i] > t.times_h[i - 1]);
  CHECK(t.times_h.back() == doctest::Approx(50.0).epsilon(1e-14));
  CHECK_THROWS_AS(integrate(x0, p, DoseSchedule{}, 0.0, {}), SimError);
  CHECK_THROWS_AS(integrate(x0, p, DoseSchedule{}, 1.005, {0.01, 0.01}), SimError);
}

TEST_CASE("drug-free steady states") {
  for (auto regime : {IodideRegime::Normal, IodideRegime::Elevated}) {
    const ModelParameters p = ModelParameters::nominal(regime);
    const auto eu = find_steady_state(p);
    const auto hyper = find_steady_state(p.hyperthyroid(2.0));
    CHECK(eu.residual_norm < 1e-8);
    CHECK(hyper.residual_norm < 1e-8);
    CHECK(scaled_residual(eu.state, p) < 1e-8);
    CHECK(scaled_residual(hyper.state, p.hyperthyroid(2.0)) < 1e-8);
    for (StateVar v : {StateVar::T4, StateVar::T3p, StateVar::T3z, StateVar::T3c, StateVar::T3n})
      CHECK(hyper.state[v] > eu.state[v]);
    CHECK(hyper.state[StateVar::TSH] < eu.state[StateVar::TSH]);
  }
}

TEST_CASE("normal-iodide euthyroid point is the calibration reference") {
  const ModelParameters p = ModelParameters::nominal();
  const auto eu = find_steady_state(p);
  const SystemState ref = reference_state(p);
  for (std::size_t i = 0; i < kStateSize; ++i)
    CHECK(eu.state.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-9).scale(1e-12));
  CHECK(ref[StateVar::ITg] == doctest::Approx(0.8990).epsilon(1e-3));
}

TEST_CASE("steady state is unique under perturbed initial guesses") {
  const ModelParameters p = ModelParameters::nominal().hyperthyroid(2.0);
  const SystemState base = find_steady_state(p).state;
  for (double sign : {-1.0, 1.0}) {
    SystemState guess = base;
    for (std::size_t i = 0; i < kHormoneCount + 1; ++i)
      guess.values[i] *= 1.0 + sign * 0.1 * ((i % 2) ? 1.0 : -1.0);
    const SystemState again = find_steady_state(p, std::nullopt, {}, guess).state;
    for (std::size_t i = 0; i < kStateSize; ++i)
      CHECK(std::abs(again.values[i] - base.values[i]) <=
            1e-6 * std::max(std::abs(base.values[i]), 1e-12));
  }
}

TEST_CASE("equilibrium is invariant over 100 drug-free days") {
  for (double gt : {1.0, 2.0}) {
    const ModelParameters p = ModelParameters::nominal().hyperthyroid(gt);
    const SystemState x0 = find_steady_state(p).state;
    const Trajectory t = integrate(x0, p, DoseSchedule{}, 2400.0, {0.01, 24.0});
    CHECK(max_relative_change(t, x0) < 1e-6);
  }
}

TEST_CASE("periodic steady state under constant daily dosing") {
  const ModelParameters p = ModelParameters::nominal().hyperthyroid(2.0);
  const auto r = find_steady_state(p, 0.001);
  CHECK(r.residual_norm < 1e-9);
  // one more dosing period returns to the same daily sample
  const ForcingFn forcing = [&p](double t) { return periodic_plasma(0.001, 24.0, t, p.pk); };
  const SystemState next = propagate(r.state, p, forcing, 24.0, 0.01);
  for (std::size_t i = 0; i < kStateSize; ++i)
    CHECK(std::abs(next.values[i] - r.state.values[i]) <=
          1e-9 * std::max(std::abs(r.state.values[i]), 1e-6));
  CHECK_THROWS_AS(find_steady_state(p, -1.0), SimError);
}

TEST_CASE("periodic plasma equals a long superposition") {
  const PkParameters pk;
  const DoseSchedule many = daily(7.0, 400);
  for (double t : {0.0, 0.3, 5.0, 23.9})
    CHECK(periodic_plasma(7.0, 24.0, t, pk) ==
          doctest::Approx(mmi_plasma_total(many, 399 * 24.0 + t, pk)).epsilon(1e-12));
}

TEST_CASE("analytic forcing agrees with a two-compartment ODE") {
  const PkParameters pk;
  // gut amount A and plasma concentration C
  const auto schedule = daily(10.0, 60);
  const PlasmaForcing forcing(schedule, pk);
  const double h = 0.002;
  double A = 0.0, C = 0.0, peak = 0.0, worst = 0.0;
  auto f = [&pk](double a, double c) {
    return std::pair{-pk.k_a * a, pk.k_a * pk.bioavailability * a / pk.volume_l - pk.k_e * c};
  };
  const int steps_per_hour = 500;
  for (int n = 0; n < 60 * 24 * steps_per_hour; ++n) {
    if (n % (24 * steps_per_hour) == 0)
      A += 10.0;
    const auto [k1a, k1c] = f(A, C);
    const auto [k2a, k2c] = f(A + 0.5 * h * k1a, C + 0.5 * h * k1c);
    const auto [k3a, k3c] = f(A + 0.5 * h * k2a, C + 0.5 * h * k2c);
    const auto [k4a, k4c] = f(A + h * k3a, C + h * k3c);
    A += h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a);
    C += h / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c);
    if ((n + 1) % 50 == 0) {
      const double t = (n + 1) * h;
      const double analytic = forcing(t);
      peak = std::max(peak, analytic);
      worst = std::max(worst, std::abs(analytic - C) / std::max(analytic, 1e-3 * peak));
    }
  }
  CHECK(worst < 1e-6);

  const ModelParameters p = ModelParameters::nominal();
  const Trajectory t = integrate(find_steady_state(p).state, p, schedule, 240.0, {0.01, 0.5});
  const TimeSeries plas = trajectory_channel(t, "MMI_plas");
  for (std::size_t i = 0; i < plas.values.size(); ++i)
    CHECK(plas.values[i] == doctest::Approx(mmi_plasma_total(schedule, plas.times_h[i], pk)).epsilon(1e-12));
}

TEST_CASE("fourth-order convergence under step halving") {
  const ModelParameters p = ModelParameters::nominal().hyperthyroid(2.0);
  const SystemState x0 = find_steady_state(p).state;
  const auto schedule = daily(0.002, 30);
  const Trajectory coarse = integrate(x0, p, schedule, 720.0, {0.04, 24.0});
  const Trajectory mid = integrate(x0, p, schedule, 720.0, {0.02, 24.0});
  const Trajectory fine = integrate(x0, p, schedule, 720.0, {0.01, 24.0});
  const double ratio = max_scaled_difference(coarse, mid) / max_scaled_difference(mid, fine);
  MESSAGE("error ratio " << ratio);
  CHECK(ratio > 12.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("integration is deterministic") {
  const ModelParameters p = ModelParameters::nominal().hyperthyroid(2.0);
  const SystemState x0 = find_steady_state(p).state;
  const auto schedule = daily(0.001, 5);
  const Trajectory a = integrate(x0, p, schedule, 120.0, {0.01, 0.25});
  const Trajectory b = integrate(x0, p, schedule, 120.0, {0.01, 0.25});
  CHECK(a.times_h == b.times_h);
  CHECK(a.states == b.states);
  CHECK(a.mmi_th == b.mmi_th);
}

TEST_CASE("filter states stay bounded under bounded input") {
  const ModelParameters p = ModelParameters::nominal();
  const Trajectory t = integrate(find_steady_state(p).state, p, daily(40.0, 60), 1440.0, {0.01, 1.0});
  const double peak_plasma = 40.0 * p.pk.plasma_per_mg() * 1.2;
  // |MMI1| <= sup|u| * int |g|, with the impulse response of x'' + a1 x' + a0 x = u
  const double bound = peak_plasma / p.filter.a0 * 10.0;
  for (const auto &s : t.states) {
    CHECK(std::abs(s[StateVar::MMI1]) < bound);
    CHECK(std::isfinite(s[StateVar::MMI2]));
  }
  for (double v : t.tpo_a)
    CHECK(v >= 0.0);
}

TEST_CASE("derived channels") {
  const ModelParameters p = ModelParameters::nominal();
  const SystemState x0 = find_steady_state(p).state;
  const Trajectory t = integrate(x0, p, DoseSchedule{}, 48.0, {0.01, 1.0});
  for (double v : trajectory_channel(t, "MMI_th").values)
    CHECK(v == 0.0);
  for (double v : trajectory_channel(t, "TPO_a").values)
    CHECK(v == doctest::Approx(tpo_activity(0.0, p.tpo)).epsilon(1e-15));
  CHECK(trajectory_channel(t, "TPO_a").values.front() == doctest::Approx(0.8990).epsilon(1e-3));
  CHECK(trajectory_channel(t, "T4").values.size() == t.size());
  CHECK_THROWS_AS(trajectory_channel(t, "FT3"), SimError);
  CHECK(trajectory_channel_names().size() == kStateSize + 3);
}

TEST_CASE("integration failures carry the failure time") {
  const ModelParameters p = ModelParameters::nominal();
  SystemState bad = find_steady_state(p).state;
  bad[StateVar::T4] = std::numeric_limits<double>::infinity();
  try {
    (void)integrate(bad, p, DoseSchedule{}, 24.0, {}, 48.0);
    FAIL("expected IntegrationError");
  } catch (const IntegrationError &e) {
    CHECK(e.time_h == 48.0);
  }
  SystemState negative = find_steady_state(p).state;
  negative[StateVar::TSH] = -0.1;
  CHECK_THROWS_AS(integrate(negative, p, DoseSchedule{}, 24.0, {}), IntegrationError);
}

TEST_CASE("trajectory append drops the duplicated junction sample") {
  const ModelParameters p = ModelParameters::nominal();
  const SystemState x0 = find_steady_state(p).state;
  Trajectory a = integrate(x0, p, DoseSchedule{}, 24.0, {0.01, 1.0});
  const Trajectory b = integrate(a.final_state(), p, DoseSchedule{}, 24.0, {0.01, 1.0}, 24.0);
  a.append(b);
  CHECK(a.size() == 49);
  CHECK(a.times_h.back() == doctest::Approx(48.0));
}
