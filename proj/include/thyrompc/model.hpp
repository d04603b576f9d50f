#pragma once

/**
 * @file model.hpp
 * @brief Pituitary-thyroid feedback loop extended with oral methimazole
 *        (MMI) pharmacokinetics and thyroid-peroxidase inhibition.
 *
 * Time is measured in hours throughout; doses in mg; plasma MMI in mg/L.
 * Hormone units are listed next to each StateVar.
 */

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace thyrompc {

inline constexpr double kSecondsPerHour = 3600.0;

class ModelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

enum class StateVar : std::size_t {
  TSH,   // plasma TSH, mU/L
  T4,    // total plasma T4 secreted by the thyroid (the T4,th pool), nmol/L
  T3p,   // total plasma T3, nmol/L
  T3z,   // pituitary T3 produced by type II deiodinase, nmol/L
  T3c,   // central (brain) T3 produced by type II deiodinase, nmol/L
  T3n,   // pituitary nuclear T3 driving TSH suppression, nmol/L
  ITg,   // organified iodide, normalized gating fraction (1 = full stores)
  MMI1,  // intrathyroidal filter state (filter time units)
  MMI2,  // intrathyroidal filter state, derivative of MMI1
};

inline constexpr std::size_t kStateSize = 9;
inline constexpr std::size_t kHormoneCount = 6;

using StateVector = std::array<double, kStateSize>;

constexpr std::size_t index(StateVar v) { return static_cast<std::size_t>(v); }

std::string_view state_name(StateVar v);
std::optional<StateVar> state_from_name(std::string_view name);
std::span<const StateVar> all_state_vars();
std::span<const StateVar> hormone_vars();

struct SystemState {
  StateVector values{};

  double &operator[](StateVar v) { return values[index(v)]; }
  double operator[](StateVar v) const { return values[index(v)]; }

  /// Throws ModelError if any entry is non-finite or a hormone/I_Tg entry is
  /// negative.
  void validate() const;

  friend bool operator==(const SystemState &, const SystemState &) = default;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// One-compartment oral absorption model.
struct PkParameters {
  double bioavailability = 0.93;
  double volume_l = 28.8;
  double k_a = 11.0;     // 1/h
  double k_e = 0.1857;   // 1/h

  void validate() const;
  /// Plasma concentration scale per mg: k_a f / (V (k_a - k_e)).
  double plasma_per_mg() const;
  /// Time of the single-dose plasma maximum, ln(k_a/k_e)/(k_a - k_e).
  double peak_time() const;
};

/// Second-order low-pass filter mapping plasma MMI to intrathyroidal MMI.
/// The coefficients are expressed per second; `time_scale` converts the
/// filter clock to the hour-based model clock.
struct FilterParameters {
  double a0 = 2.5e-9;
  double a1 = 92.2e-6;
  double b0 = 37e-9;
  double b1 = 690.3e-6;
  double time_scale = kSecondsPerHour;  // filter time units per hour

  void validate() const;
  /// Steady-state intrathyroidal/plasma ratio, b0/a0.
  double dc_gain() const { return b0 / a0; }
};

enum class IodideRegime { Normal, Elevated };

std::string_view regime_name(IodideRegime r);
std::optional<IodideRegime> regime_from_name(std::string_view name);

/// Logistic remaining-activity curve of thyroid peroxidase.
struct TpoCurveParameters {
  double c0 = 0.9;
  double c1 = 84.1e3;
  double c2 = 1.3;
  double c3 = 80.5e-6;

  static TpoCurveParameters normal_iodide() { return {0.9, 84.1e3, 1.3, 80.5e-6}; }
  static TpoCurveParameters elevated_iodide() { return {1.0, 175.8e3, 5.0, 97.6e-3}; }
  static TpoCurveParameters preset(IodideRegime r);

  void validate() const;
  /// Intrathyroidal concentration at which activity is c0/2.
  double half_inhibition() const { return c2 * c3; }
};

/// Remaining constants of the six-state feedback loop. See constants.cpp for
/// units and provenance of each value.
struct BaseConstants {
  double G_H = 14.904;       // pituitary TSH secretory capacity, mU/(L h)
  double beta_S = 0.828;     // TSH clearance, 1/h
  double D_R = 1.7334031858765868;  // nuclear T3 half-suppression, nmol/L
  double n_S = 6.0;          // TSH suppression steepness
  double beta_T = 0.0041258760747615;  // T4 clearance, 1/h
  double f_T4 = 0.16;        // FT4 (pmol/L) per total T4 (nmol/L)
  double beta_31 = 0.0288811325233311;  // plasma T3 clearance, 1/h
  double K_M1 = 5.0e5;       // type I deiodinase Michaelis constant, pmol/L
  double D_T3 = 2.75;        // TSH half-saturation of direct T3 synthesis, mU/L
  double alpha_S2 = 1.0;     // pituitary T3 dilution, dimensionless
  double beta_S2 = 1.332;    // pituitary T3 clearance, 1/h
  double K_M2 = 1000.0;      // type II deiodinase Michaelis constant, pmol/L
  double alpha_32 = 3.1405405405405404;  // central T3 dilution, dimensionless
  double beta_32 = 2.988;    // central T3 clearance, 1/h
  double k_n = 0.1;          // nuclear T3 equilibration rate, 1/h
  double k_Tg = 1.0 / 120.0; // organified iodide turnover, 1/h
  double TPO = 1.0;          // relative TPO amount, dimensionless
};

struct ConstantInfo {
  std::string_view name;
  double BaseConstants::*member;
  std::string_view unit;
  std::string_view note;
};

/// Name/unit/provenance table backing JSON overrides and meta output.
std::span<const ConstantInfo> base_constant_table();

struct ModelParameters {
  double G_T = 1.1601407673935;   // thyroid secretory capacity, nmol/(L h)
  double D_T = 2.75;              // TSH half-saturation of T4 secretion, mU/L
  double G_D1 = 1299.69255238073; // type I deiodinase capacity, nmol/(L h)
  double G_D2 = 211.455;          // type II deiodinase capacity, nmol/(L h)
  double G_T3 = 0.0262818305962;  // direct T3 synthesis capacity, nmol/(L h)
  PkParameters pk;
  FilterParameters filter;
  TpoCurveParameters tpo;
  BaseConstants base;

  /// Euthyroid parameter set with the TPO curve of the given iodide regime.
  static ModelParameters nominal(IodideRegime regime = IodideRegime::Normal);

  /// Copy with G_T multiplied by `factor`; nothing else changes.
  ModelParameters hyperthyroid(double factor) const;

  void validate() const;

  friend bool operator==(const ModelParameters &, const ModelParameters &);
};

// ---------------------------------------------------------------------------
// Dosing
// ---------------------------------------------------------------------------

struct DoseEvent {
  double t0_h = 0.0;
  double amount_mg = 0.0;

  friend bool operator==(const DoseEvent &, const DoseEvent &) = default;
};

/// Time-ordered dose events; coincident events are merged by summation.
class DoseSchedule {
public:
  DoseSchedule() = default;
  explicit DoseSchedule(std::vector<DoseEvent> events);

  void add(DoseEvent event);

  std::span<const DoseEvent> events() const { return events_; }
  bool empty() const { return events_.empty(); }
  std::size_t size() const { return events_.size(); }
  double total_mg() const;

private:
  void normalize();

  std::vector<DoseEvent> events_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Plasma concentration `elapsed_h` hours after a single oral dose.
double mmi_plasma_single(double dose_mg, double elapsed_h, const PkParameters &pk);

/// Superposition of single-dose responses over every event with t0 <= t.
double mmi_plasma_total(const DoseSchedule &schedule, double t_h, const PkParameters &pk);

double tpo_activity(double mmi_th, const TpoCurveParameters &curve);
double tpo_activity_derivative(double mmi_th, const TpoCurveParameters &curve);

/// Intrathyroidal MMI, b0 MMI1 + b1 MMI2 clamped at zero.
double mmi_th(const SystemState &state, const FilterParameters &filter);
double mmi_th(const StateVector &x, const FilterParameters &filter);

/// Right-hand side for a given plasma MMI concentration. No validation.
StateVector evaluate_rhs(const StateVector &x, const ModelParameters &params, double plasma);

/// Transposed Jacobian-vector product (df/dx)^T v at x. The plasma input
/// does not depend on x, so it is not needed here.
StateVector rhs_vjp(const StateVector &x, const ModelParameters &params, const StateVector &v);

/// d f / d plasma; only the MMI2 component is nonzero.
inline double rhs_plasma_sensitivity(const ModelParameters &params) {
  return params.filter.time_scale;
}

/// Full time derivative with plasma forcing from `schedule`. Throws
/// ModelError naming the first non-finite component.
SystemState system_rhs(const SystemState &state, const ModelParameters &params, double t_h,
                       const DoseSchedule &schedule);

/// O(log n) evaluation of mmi_plasma_total via running exponential sums.
class PlasmaForcing {
public:
  PlasmaForcing() = default;
  PlasmaForcing(const DoseSchedule &schedule, const PkParameters &pk);

  double operator()(double t_h) const;

private:
  std::vector<double> times_;
  std::vector<double> slow_;
  std::vector<double> fast_;
  double gain_ = 0.0;
  double k_e_ = 0.0;
  double k_a_ = 0.0;
};

}  // namespace thyrompc
