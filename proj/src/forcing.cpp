#include "thyrompc/model.hpp"

#include <algorithm>
#include <cmath>

namespace thyrompc {

// For t in [t_i, t_{i+1}):
//   sum_j u_j (e^{-k_e (t - t_j)} - e^{-k_a (t - t_j)})
//     = slow_i e^{-k_e (t - t_i)} - fast_i e^{-k_a (t - t_i)}
// with slow_i = sum_{j <= i} u_j e^{-k_e (t_i - t_j)} accumulated recursively.
PlasmaForcing::PlasmaForcing(const DoseSchedule &schedule, const PkParameters &pk)
    : gain_(0.0), k_e_(pk.k_e), k_a_(pk.k_a) {
  pk.validate();
  gain_ = pk.plasma_per_mg();
  const auto events = schedule.events();
  times_.reserve(events.size());
  slow_.reserve(events.size());
  fast_.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    double slow = events[i].amount_mg;
    double fast = events[i].amount_mg;
    if (i > 0) {
      const double dt = events[i].t0_h - times_.back();
      slow += slow_.back() * std::exp(-k_e_ * dt);
      fast += fast_.back() * std::exp(-k_a_ * dt);
    }
    times_.push_back(events[i].t0_h);
    slow_.push_back(slow);
    fast_.push_back(fast);
  }
}

double PlasmaForcing::operator()(double t_h) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t_h);
  if (it == times_.begin())
    return 0.0;
  const auto i = static_cast<std::size_t>(it - times_.begin()) - 1;
  const double dt = t_h - times_[i];
  return gain_ * (slow_[i] * std::exp(-k_e_ * dt) - fast_[i] * std::exp(-k_a_ * dt));
}

}  // namespace thyrompc
