// Base constants of the six-state pituitary-thyroid loop.
//
// Structure follows the classic compartmental model of the loop: TSH
// drives thyroidal T4 secretion through a Michaelis-Menten term, T4 is
// deiodinated to T3 by type I (plasma) and type II (pituitary, central)
// deiodinases, a direct TSH-dependent T3 synthesis pathway adds to plasma
// T3, and pituitary nuclear T3 suppresses TSH release.
//
// Clearance rates are taken from hormone half-lives (TSH ~50 min, T4 7 d,
// T3 1 d) and the deiodinase Michaelis constants from the same model family
// (K_M1 = 500 nmol/L, K_M2 = 1 nmol/L, D_T = 2.75 mU/L). The secretory
// capacities G_H, G_T, G_D1, G_D2, G_T3 and the dilution alpha_32 are
// calibrated so that the drug-free, normal-iodide equilibrium sits at the
// reference point
//
//   TSH 1.8 mU/L, T4 100 nmol/L (FT4 16 pmol/L), T3p 1.8 nmol/L,
//   T3z = T3n 2.5 nmol/L, T3c 3.5 nmol/L, I_Tg = tpo_activity(0) ~ 0.899,
//
// with 20 % of plasma T3 produced by direct synthesis. I_Tg is a normalized
// gating fraction: the T4 secretion term is multiplied by it, and its own
// equation relaxes towards TPO * tpo_activity(MMI_th).

#include "thyrompc/model.hpp"

namespace thyrompc {

namespace {

constexpr ConstantInfo kTable[] = {
    {"G_H", &BaseConstants::G_H, "mU/(L h)", "calibrated: TSH 1.8 mU/L at reference point"},
    {"beta_S", &BaseConstants::beta_S, "1/h", "TSH clearance (2.3e-4 1/s)"},
    {"D_R", &BaseConstants::D_R, "nmol/L", "calibrated: (T3n/D_R)^n_S = 9 at reference point"},
    {"n_S", &BaseConstants::n_S, "1", "log-linear TSH/FT4 steepness"},
    {"beta_T", &BaseConstants::beta_T, "1/h", "T4 half-life 7 d"},
    {"f_T4", &BaseConstants::f_T4, "pmol/nmol", "free T4 fraction 0.016 %"},
    {"beta_31", &BaseConstants::beta_31, "1/h", "T3 half-life 1 d"},
    {"K_M1", &BaseConstants::K_M1, "pmol/L", "type I deiodinase Michaelis constant"},
    {"D_T3", &BaseConstants::D_T3, "mU/L", "direct T3 synthesis half-saturation"},
    {"alpha_S2", &BaseConstants::alpha_S2, "1", "pituitary T3 dilution"},
    {"beta_S2", &BaseConstants::beta_S2, "1/h", "pituitary T3 clearance (3.7e-4 1/s)"},
    {"K_M2", &BaseConstants::K_M2, "pmol/L", "type II deiodinase Michaelis constant"},
    {"alpha_32", &BaseConstants::alpha_32, "1", "calibrated: T3c 3.5 nmol/L at reference point"},
    {"beta_32", &BaseConstants::beta_32, "1/h", "central T3 clearance (8.3e-4 1/s)"},
    {"k_n", &BaseConstants::k_n, "1/h", "nuclear T3 equilibration"},
    {"k_Tg", &BaseConstants::k_Tg, "1/h", "organified iodide turnover, time constant 5 d"},
    {"TPO", &BaseConstants::TPO, "1", "relative TPO amount multiplying tpo_activity"},
};

}  // namespace

std::span<const ConstantInfo> base_constant_table() { return kTable; }

}  // namespace thyrompc
