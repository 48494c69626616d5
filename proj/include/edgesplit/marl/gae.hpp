#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "edgesplit/error.hpp"

namespace edgesplit::marl {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimation over one trajectory segment.
/// δ_t = r_t + γ V_{t+1} - V_t with V_T = bootstrap; A_t = δ_t + γλ A_{t+1}.
inline GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap, double gamma,
                     double lam) {
  if (rewards.size() != values.size()) throw DomainError("gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap;
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double delta = rewards[t] + gamma * next_value - values[t];
    running = delta + gamma * lam * running;
    out.advantages[t] = running;
    out.returns[t] = running + values[t];
    next_value = values[t];
  }
  return out;
}

/// In-place standardization to zero mean and unit deviation. Vectors with
/// (near) zero spread are only centered.
inline void standardize(std::vector<double>& v) {
  if (v.empty()) return;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = sd > 1e-8 ? (x - mean) / sd : x - mean;
}

}  // namespace edgesplit::marl
