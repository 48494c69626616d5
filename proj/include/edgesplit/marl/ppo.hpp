#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "edgesplit/error.hpp"
#include "edgesplit/nn/autodiff.hpp"

namespace edgesplit::marl {

/// mean_t min(ρ_t A_t, clip(ρ_t, 1-ε, 1+ε) A_t), ρ_t = exp(logp_new - logp_old).
inline double ppo_clip_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                                 std::span<const double> adv, double clip_eps) {
  if (logp_new.size() != logp_old.size() || logp_new.size() != adv.size()) {
    throw DomainError("ppo objective: input lengths differ");
  }
  if (logp_new.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t n = 0; n < adv.size(); ++n) {
    const double ratio = std::exp(logp_new[n] - logp_old[n]);
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    acc += std::min(ratio * adv[n], clipped * adv[n]);
  }
  return acc / static_cast<double>(adv.size());
}

/// Per-row clipped surrogate terms (n x 1); old log-probs and advantages are
/// constants. Rows are weighted by `weight` before the caller reduces.
inline nn::Var ppo_clip_terms(nn::Var logp_new, const nn::Matrix& logp_old, const nn::Matrix& adv, double clip_eps) {
  nn::Tape& t = *logp_new.tape;
  nn::Var ratio = nn::exp(nn::sub(logp_new, t.constant(logp_old)));
  nn::Var a = t.constant(adv);
  nn::Var unclipped = nn::mul(ratio, a);
  nn::Var clipped = nn::mul(nn::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps), a);
  return nn::minimum(unclipped, clipped);
}

inline nn::Var ppo_clip_surrogate(nn::Var logp_new, const nn::Matrix& logp_old, const nn::Matrix& adv, double clip_eps) {
  return nn::mean(ppo_clip_terms(logp_new, logp_old, adv, clip_eps));
}

}  // namespace edgesplit::marl
