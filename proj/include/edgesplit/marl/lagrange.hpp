#pragma once

#include <algorithm>

#include "edgesplit/error.hpp"

namespace edgesplit::marl {

/// Shared multiplier of the long-run delay constraint.
struct LagrangeState {
  double lambda = 0.01;
  double alpha = 0.01;
  double lo = 0.0;
  double hi = 100.0;
  double j_bar = 3.0;  // per-step mean delay threshold, seconds
};

/// Projected ascent step λ' = clamp(λ + α (Ĵ - J̄), lo, hi).
inline LagrangeState lagrangian_dual_update(LagrangeState s, double j_hat) {
  if (!(j_hat >= 0.0)) throw DomainError("dual update: measured delay must be >= 0");
  s.lambda = std::clamp(s.lambda + s.alpha * (j_hat - s.j_bar), s.lo, s.hi);
  return s;
}

}  // namespace edgesplit::marl
