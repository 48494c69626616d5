#pragma once

// Auto-regressive deployment macro-actions: sampling, batched replay for the
// PPO update, and the macro-level value.

#include <optional>
#include <span>
#include <vector>

#include "edgesplit/marl/networks.hpp"
#include "edgesplit/nn/distributions.hpp"

namespace edgesplit::marl {

/// Models not yet selected whose size fits the remaining storage.
inline std::vector<bool> feasible_models(const std::vector<double>& x_st, double storage_left,
                                         std::span<const std::int64_t> sizes) {
  std::vector<bool> mask(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    mask[i] = x_st[i] == 0.0 && static_cast<double>(sizes[i]) <= storage_left;
  }
  return mask;
}

inline bool any_of(const std::vector<bool>& mask) {
  for (bool b : mask) {
    if (b) return true;
  }
  return false;
}

struct MacroSample {
  std::vector<int> models;
  double log_prob = 0.0;
  std::vector<Matrix> hiddens;  // h_1 .. h_max(L,1)
  std::vector<std::vector<bool>> masks;  // one per selection
};

/// Draws one macro-action. `base_obs` is [r, h_j] (2I entries); the selected
/// set x_st is appended before every GRU step. Selection continues until no
/// model fits. With rng == nullptr the most probable model is taken.
inline MacroSample sample_deploy_macro(const DeployNet& net, const std::vector<double>& base_obs, double storage,
                                       std::span<const std::int64_t> sizes, Rng* rng) {
  const auto I = sizes.size();
  if (base_obs.size() != 2 * I) throw ShapeError("deploy: base observation must have 2I entries");
  MacroSample out;
  std::vector<double> x_st(I, 0.0);
  double left = storage;
  Tape t;
  Var h = t.constant(Matrix::Zero(1, net.hidden()));
  auto advance = [&] {
    Matrix obs(1, static_cast<Index>(3 * I));
    for (std::size_t n = 0; n < 2 * I; ++n) obs(0, static_cast<Index>(n)) = base_obs[n];
    for (std::size_t n = 0; n < I; ++n) obs(0, static_cast<Index>(2 * I + n)) = x_st[n];
    h = net.step(t, obs, h);
    out.hiddens.push_back(h.value());
  };
  advance();
  for (;;) {
    auto mask = feasible_models(x_st, left, sizes);
    if (!any_of(mask)) break;
    const Matrix& lv = net.logits(t, h).value();
    nn::MaskedCategorical dist(std::vector<double>(lv.data(), lv.data() + lv.size()), mask);
    const int pick = rng ? dist.sample(*rng) : dist.mode();
    out.log_prob += dist.log_prob(pick);
    out.models.push_back(pick);
    out.masks.push_back(std::move(mask));
    x_st[static_cast<std::size_t>(pick)] = 1.0;
    left -= static_cast<double>(sizes[static_cast<std::size_t>(pick)]);
    if (!any_of(feasible_models(x_st, left, sizes))) break;
    advance();
  }
  return out;
}

/// Mean of the per-selection values; an empty macro-action uses the value
/// computed before the first selection.
inline double macro_value(std::span<const double> step_values, double pre_step_value) {
  if (step_values.empty()) return pre_step_value;
  double s = 0.0;
  for (double v : step_values) s += v;
  return s / static_cast<double>(step_values.size());
}

struct DeployRecord {
  int env = 0;
  int server = 0;
  std::vector<double> base_obs;    // [r, h_j]
  std::vector<double> vec_x_prev;  // deployment being replaced
  std::vector<int> models;
  std::vector<std::vector<bool>> masks;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  double advantage = 0.0;
  double target = 0.0;  // normalized return
};

struct DeployReplay {
  Var log_prob;  // R x 1, sum over selections
  Var entropy;   // R x 1, sum over selections
  Var value;     // R x 1, macro value (critic scale)
};

/// Re-runs the GRU over stored macro-actions for a batch of records.
inline DeployReplay replay_deploy(Tape& t, const DeployNet& net, const std::vector<const DeployRecord*>& recs,
                                  int models) {
  const auto R = static_cast<Index>(recs.size());
  const Index I = models;
  std::size_t steps = 1;
  for (const auto* r : recs) steps = std::max(steps, r->models.size());
  Matrix x_st = Matrix::Zero(R, I);
  Matrix vec_prev(R, static_cast<Index>(recs.front()->vec_x_prev.size()));
  for (Index r = 0; r < R; ++r) {
    const auto& v = recs[static_cast<std::size_t>(r)]->vec_x_prev;
    for (std::size_t n = 0; n < v.size(); ++n) vec_prev(r, static_cast<Index>(n)) = v[n];
  }
  Var h = t.constant(Matrix::Zero(R, net.hidden()));
  std::optional<Var> logp, ent, val;
  for (std::size_t n = 0; n < steps; ++n) {
    Matrix obs(R, 3 * I);
    for (Index r = 0; r < R; ++r) {
      const auto& b = recs[static_cast<std::size_t>(r)]->base_obs;
      for (Index c = 0; c < 2 * I; ++c) obs(r, c) = b[static_cast<std::size_t>(c)];
    }
    obs.rightCols(I) = x_st;
    h = net.step(t, obs, h);
    Matrix w(R, 1), active(R, 1), mask = Matrix::Ones(R, I);
    std::vector<int> chosen(static_cast<std::size_t>(R), 0);
    for (Index r = 0; r < R; ++r) {
      const auto& rec = *recs[static_cast<std::size_t>(r)];
      const std::size_t L = rec.models.size();
      w(r, 0) = L == 0 ? (n == 0 ? 1.0 : 0.0) : (n < L ? 1.0 / static_cast<double>(L) : 0.0);
      active(r, 0) = n < L ? 1.0 : 0.0;
      if (n < L) {
        for (Index c = 0; c < I; ++c) mask(r, c) = rec.masks[n][static_cast<std::size_t>(c)] ? 1.0 : 0.0;
        chosen[static_cast<std::size_t>(r)] = rec.models[n];
      }
    }
    Var v = nn::mul_col(net.value(t, h, vec_prev), t.constant(w));
    val = val ? nn::add(*val, v) : v;
    Var logits = net.logits(t, h);
    Var lp = nn::mul_col(nn::pick(nn::masked_log_softmax(logits, mask), chosen), t.constant(active));
    Var en = nn::mul_col(nn::masked_entropy(logits, mask), t.constant(active));
    logp = logp ? nn::add(*logp, lp) : lp;
    ent = ent ? nn::add(*ent, en) : en;
    for (Index r = 0; r < R; ++r) {
      if (active(r, 0) != 0.0) x_st(r, chosen[static_cast<std::size_t>(r)]) = 1.0;
    }
  }
  return {*logp, *ent, *val};
}

}  // namespace edgesplit::marl
