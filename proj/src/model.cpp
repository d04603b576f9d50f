#include "thyrompc/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace thyrompc {

namespace {

constexpr std::array<StateVar, kStateSize> kAllVars = {
    StateVar::TSH, StateVar::T4,  StateVar::T3p,  StateVar::T3z, StateVar::T3c,
    StateVar::T3n, StateVar::ITg, StateVar::MMI1, StateVar::MMI2,
};

constexpr std::array<std::string_view, kStateSize> kNames = {
    "TSH", "T4", "T3p", "T3z", "T3c", "T3n", "ITg", "MMI1", "MMI2",
};

constexpr double kTpoExponentClip = 700.0;

void require(bool ok, const std::string &what) {
  if (!ok)
    throw ModelError(what);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

double power(double base, double exponent) {
  if (exponent == 6.0) {
    const double b2 = base * base;
    return b2 * b2 * b2;
  }
  return std::pow(base, exponent);
}

}  // namespace

std::string_view state_name(StateVar v) { return kNames[index(v)]; }

std::optional<StateVar> state_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kStateSize; ++i)
    if (kNames[i] == name)
      return kAllVars[i];
  return std::nullopt;
}

std::span<const StateVar> all_state_vars() { return kAllVars; }

std::span<const StateVar> hormone_vars() {
  return std::span<const StateVar>(kAllVars).first(kHormoneCount);
}

void SystemState::validate() const {
  for (std::size_t i = 0; i < kStateSize; ++i) {
    require(std::isfinite(values[i]), "state component " + std::string(kNames[i]) + " is not finite");
    if (kAllVars[i] != StateVar::MMI1 && kAllVars[i] != StateVar::MMI2)
      require(values[i] >= 0.0, "state component " + std::string(kNames[i]) + " is negative");
  }
}

// ---------------------------------------------------------------------------

void PkParameters::validate() const {
  require(std::isfinite(bioavailability) && bioavailability > 0.0 && bioavailability <= 1.0,
          "pk: bioavailability must lie in (0, 1]");
  require(positive(volume_l), "pk: volume of distribution must be positive");
  require(positive(k_a), "pk: k_a must be positive");
  require(positive(k_e), "pk: k_e must be positive");
  require(std::abs(k_a - k_e) > 1e-9 * std::max(k_a, k_e),
          "pk: k_a and k_e are degenerate (closed form requires distinct rates)");
}

double PkParameters::plasma_per_mg() const {
  return k_a * bioavailability / (volume_l * (k_a - k_e));
}

double PkParameters::peak_time() const { return std::log(k_a / k_e) / (k_a - k_e); }

void FilterParameters::validate() const {
  require(positive(a0) && positive(a1), "filter: a0 and a1 must be positive");
  require(std::isfinite(b0) && std::isfinite(b1), "filter: b0 and b1 must be finite");
  require(positive(time_scale), "filter: time_scale must be positive");
}

std::string_view regime_name(IodideRegime r) {
  return r == IodideRegime::Normal ? "normal" : "elevated";
}

std::optional<IodideRegime> regime_from_name(std::string_view name) {
  if (name == "normal")
    return IodideRegime::Normal;
  if (name == "elevated")
    return IodideRegime::Elevated;
  return std::nullopt;
}

TpoCurveParameters TpoCurveParameters::preset(IodideRegime r) {
  return r == IodideRegime::Normal ? normal_iodide() : elevated_iodide();
}

void TpoCurveParameters::validate() const {
  require(std::isfinite(c0) && c0 > 0.0 && c0 <= 1.0, "tpo: c0 must lie in (0, 1]");
  require(positive(c1) && positive(c2) && positive(c3), "tpo: c1, c2, c3 must be positive");
}

ModelParameters ModelParameters::nominal(IodideRegime regime) {
  ModelParameters p;
  p.tpo = TpoCurveParameters::preset(regime);
  return p;
}

ModelParameters ModelParameters::hyperthyroid(double factor) const {
  require(positive(factor), "hyperthyroid factor must be positive");
  ModelParameters p = *this;
  p.G_T *= factor;
  return p;
}

void ModelParameters::validate() const {
  require(positive(G_T) && positive(D_T) && positive(G_D1) && positive(G_D2) && positive(G_T3),
          "model: G_T, D_T, G_D1, G_D2, G_T3 must be positive");
  pk.validate();
  filter.validate();
  tpo.validate();
  for (const auto &c : base_constant_table())
    require(positive(base.*c.member), "model: base constant " + std::string(c.name) + " must be positive");
}

bool operator==(const ModelParameters &a, const ModelParameters &b) {
  if (a.G_T != b.G_T || a.D_T != b.D_T || a.G_D1 != b.G_D1 || a.G_D2 != b.G_D2 || a.G_T3 != b.G_T3)
    return false;
  if (a.pk.bioavailability != b.pk.bioavailability || a.pk.volume_l != b.pk.volume_l ||
      a.pk.k_a != b.pk.k_a || a.pk.k_e != b.pk.k_e)
    return false;
  if (a.filter.a0 != b.filter.a0 || a.filter.a1 != b.filter.a1 || a.filter.b0 != b.filter.b0 ||
      a.filter.b1 != b.filter.b1 || a.filter.time_scale != b.filter.time_scale)
    return false;
  if (a.tpo.c0 != b.tpo.c0 || a.tpo.c1 != b.tpo.c1 || a.tpo.c2 != b.tpo.c2 || a.tpo.c3 != b.tpo.c3)
    return false;
  for (const auto &c : base_constant_table())
    if (a.base.*c.member != b.base.*c.member)
      return false;
  return true;
}

// ---------------------------------------------------------------------------

DoseSchedule::DoseSchedule(std::vector<DoseEvent> events) : events_(std::move(events)) {
  normalize();
}

void DoseSchedule::add(DoseEvent event) {
  events_.push_back(event);
  normalize();
}

double DoseSchedule::total_mg() const {
  double total = 0.0;
  for (const auto &e : events_)
    total += e.amount_mg;
  return total;
}

void DoseSchedule::normalize() {
  for (const auto &e : events_) {
    require(std::isfinite(e.t0_h), "dose event time must be finite");
    require(std::isfinite(e.amount_mg) && e.amount_mg >= 0.0, "dose amount must be finite and >= 0");
  }
  std::stable_sort(events_.begin(), events_.end(),
                   [](const DoseEvent &a, const DoseEvent &b) { return a.t0_h < b.t0_h; });
  std::vector<DoseEvent> merged;
  merged.reserve(events_.size());
  for (const auto &e : events_) {
    if (!merged.empty() && e.t0_h == merged.back().t0_h)
      merged.back().amount_mg += e.amount_mg;
    else
      merged.push_back(e);
  }
  events_ = std::move(merged);
}

// ---------------------------------------------------------------------------

double mmi_plasma_single(double dose_mg, double elapsed_h, const PkParameters &pk) {
  pk.validate();
  require(std::isfinite(elapsed_h) && elapsed_h >= 0.0, "elapsed time must be >= 0");
  return dose_mg * pk.plasma_per_mg() * (std::exp(-pk.k_e * elapsed_h) - std::exp(-pk.k_a * elapsed_h));
}

double mmi_plasma_total(const DoseSchedule &schedule, double t_h, const PkParameters &pk) {
  double total = 0.0;
  for (const auto &e : schedule.events()) {
    if (e.t0_h > t_h)
      break;
    total += mmi_plasma_single(e.amount_mg, t_h - e.t0_h, pk);
  }
  return total;
}

namespace {

double tpo_exponent(double mmi, const TpoCurveParameters &c) {
  // exp(-c1 (-m/c2 + c3)) written as exp(z)
  const double z = c.c1 * (mmi / c.c2 - c.c3);
  return std::clamp(z, -kTpoExponentClip, kTpoExponentClip);
}

}  // namespace

double tpo_activity(double mmi, const TpoCurveParameters &curve) {
  const double m = std::max(mmi, 0.0);
  return curve.c0 / (1.0 + std::exp(tpo_exponent(m, curve)));
}

double tpo_activity_derivative(double mmi, const TpoCurveParameters &curve) {
  if (mmi < 0.0)
    return 0.0;
  const double raw = curve.c1 * (mmi / curve.c2 - curve.c3);
  if (std::abs(raw) >= kTpoExponentClip)
    return 0.0;
  const double s = 1.0 / (1.0 + std::exp(raw));
  return -curve.c0 * s * (1.0 - s) * curve.c1 / curve.c2;
}

double mmi_th(const StateVector &x, const FilterParameters &filter) {
  const double raw = filter.b0 * x[index(StateVar::MMI1)] + filter.b1 * x[index(StateVar::MMI2)];
  return std::max(raw, 0.0);
}

double mmi_th(const SystemState &state, const FilterParameters &filter) {
  return mmi_th(state.values, filter);
}

namespace {

struct Intermediates {
  double tsh_drive;   // TSH / (D_T + TSH)
  double shunt_drive; // TSH / (D_T3 + TSH)
  double ft4;
  double d1_drive;    // FT4 / (K_M1 + FT4)
  double d2_drive;    // FT4 / (K_M2 + FT4)
  double suppression; // (T3n / D_R)^n_S
  double mmi_raw;
};

Intermediates intermediates(const StateVector &x, const ModelParameters &p) {
  const auto &b = p.base;
  const double tsh = x[index(StateVar::TSH)];
  Intermediates m{};
  m.tsh_drive = tsh / (p.D_T + tsh);
  m.shunt_drive = tsh / (b.D_T3 + tsh);
  m.ft4 = b.f_T4 * x[index(StateVar::T4)];
  m.d1_drive = m.ft4 / (b.K_M1 + m.ft4);
  m.d2_drive = m.ft4 / (b.K_M2 + m.ft4);
  m.suppression = power(std::max(x[index(StateVar::T3n)], 0.0) / b.D_R, b.n_S);
  m.mmi_raw = p.filter.b0 * x[index(StateVar::MMI1)] + p.filter.b1 * x[index(StateVar::MMI2)];
  return m;
}

}  // namespace

StateVector evaluate_rhs(const StateVector &x, const ModelParameters &p, double plasma) {
  const auto &b = p.base;
  const auto &f = p.filter;
  const Intermediates m = intermediates(x, p);
  const double tpo_a = tpo_activity(m.mmi_raw, p.tpo);

  StateVector dx{};
  dx[index(StateVar::TSH)] = b.G_H / (1.0 + m.suppression) - b.beta_S * x[index(StateVar::TSH)];
  dx[index(StateVar::T4)] =
      p.G_T * m.tsh_drive * x[index(StateVar::ITg)] - b.beta_T * x[index(StateVar::T4)];
  dx[index(StateVar::T3p)] =
      p.G_D1 * m.d1_drive + p.G_T3 * m.shunt_drive - b.beta_31 * x[index(StateVar::T3p)];
  dx[index(StateVar::T3z)] = b.alpha_S2 * p.G_D2 * m.d2_drive - b.beta_S2 * x[index(StateVar::T3z)];
  dx[index(StateVar::T3c)] = b.alpha_32 * p.G_D2 * m.d2_drive - b.beta_32 * x[index(StateVar::T3c)];
  dx[index(StateVar::T3n)] = b.k_n * (x[index(StateVar::T3z)] - x[index(StateVar::T3n)]);
  dx[index(StateVar::ITg)] = b.k_Tg * (b.TPO * tpo_a - x[index(StateVar::ITg)]);
  dx[index(StateVar::MMI1)] = f.time_scale * x[index(StateVar::MMI2)];
  dx[index(StateVar::MMI2)] =
      f.time_scale * (-f.a0 * x[index(StateVar::MMI1)] - f.a1 * x[index(StateVar::MMI2)] + plasma);
  return dx;
}

StateVector rhs_vjp(const StateVector &x, const ModelParameters &p, const StateVector &v) {
  const auto &b = p.base;
  const auto &f = p.filter;
  const Intermediates m = intermediates(x, p);
  const double tsh = x[index(StateVar::TSH)];
  const double itg = x[index(StateVar::ITg)];
  const double t3n = std::max(x[index(StateVar::T3n)], 0.0);

  const double v_tsh = v[index(StateVar::TSH)], v_t4 = v[index(StateVar::T4)];
  const double v_t3p = v[index(StateVar::T3p)], v_t3z = v[index(StateVar::T3z)];
  const double v_t3c = v[index(StateVar::T3c)], v_t3n = v[index(StateVar::T3n)];
  const double v_itg = v[index(StateVar::ITg)], v_m1 = v[index(StateVar::MMI1)];
  const double v_m2 = v[index(StateVar::MMI2)];

  const double dtsh_drive = p.D_T / ((p.D_T + tsh) * (p.D_T + tsh));
  const double dshunt = b.D_T3 / ((b.D_T3 + tsh) * (b.D_T3 + tsh));
  const double dd1 = b.K_M1 / ((b.K_M1 + m.ft4) * (b.K_M1 + m.ft4)) * b.f_T4;
  const double dd2 = b.K_M2 / ((b.K_M2 + m.ft4) * (b.K_M2 + m.ft4)) * b.f_T4;
  double dsupp = 0.0;
  if (t3n > 0.0)
    dsupp = -b.G_H * b.n_S * m.suppression / t3n / ((1.0 + m.suppression) * (1.0 + m.suppression));
  const double dtpo = tpo_activity_derivative(m.mmi_raw, p.tpo);

  StateVector out{};
  out[index(StateVar::TSH)] = -b.beta_S * v_tsh + p.G_T * itg * dtsh_drive * v_t4 + p.G_T3 * dshunt * v_t3p;
  out[index(StateVar::T4)] = -b.beta_T * v_t4 + p.G_D1 * dd1 * v_t3p +
                             b.alpha_S2 * p.G_D2 * dd2 * v_t3z + b.alpha_32 * p.G_D2 * dd2 * v_t3c;
  out[index(StateVar::T3p)] = -b.beta_31 * v_t3p;
  out[index(StateVar::T3z)] = -b.beta_S2 * v_t3z + b.k_n * v_t3n;
  out[index(StateVar::T3c)] = -b.beta_32 * v_t3c;
  out[index(StateVar::T3n)] = dsupp * v_tsh - b.k_n * v_t3n;
  out[index(StateVar::ITg)] = p.G_T * m.tsh_drive * v_t4 - b.k_Tg * v_itg;
  out[index(StateVar::MMI1)] = b.k_Tg * b.TPO * dtpo * f.b0 * v_itg - f.time_scale * f.a0 * v_m2;
  out[index(StateVar::MMI2)] =
      b.k_Tg * b.TPO * dtpo * f.b1 * v_itg + f.time_scale * v_m1 - f.time_scale * f.a1 * v_m2;
  return out;
}

SystemState system_rhs(const SystemState &state, const ModelParameters &params, double t_h,
                       const DoseSchedule &schedule) {
  const double plasma = mmi_plasma_total(schedule, t_h, params.pk);
  require(std::isfinite(plasma), "system_rhs: plasma MMI is not finite at t=" + std::to_string(t_h));
  SystemState out{evaluate_rhs(state.values, params, plasma)};
  for (std::size_t i = 0; i < kStateSize; ++i)
    require(std::isfinite(out.values[i]),
            "system_rhs: derivative of " + std::string(kNames[i]) + " is not finite");
  return out;
}

}  // namespace thyrompc
