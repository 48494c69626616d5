#pragma once

// Numeric (rollout-time) action selection for the user and allocation layers.

#include <cmath>
#include <vector>

#include "edgesplit/env.hpp"
#include "edgesplit/marl/networks.hpp"
#include "edgesplit/nn/distributions.hpp"

namespace edgesplit::marl {

struct UserDraw {
  UserAction action;
  double log_prob = 0.0;
  double entropy = 0.0;
};

/// Joint (server, split) draw from the two heads of one logits row; splits
/// beyond `layer_count` are masked. rng == nullptr takes each head's mode.
inline UserDraw user_draw_from_logits(const Matrix& server_logits, const Matrix& split_logits, Index row,
                                      int layer_count, Rng* rng) {
  const Index J = server_logits.cols(), S = split_logits.cols();
  std::vector<double> sl(static_cast<std::size_t>(J)), pl(static_cast<std::size_t>(S));
  std::vector<bool> sm(static_cast<std::size_t>(J), true), pm(static_cast<std::size_t>(S));
  for (Index c = 0; c < J; ++c) sl[static_cast<std::size_t>(c)] = server_logits(row, c);
  for (Index c = 0; c < S; ++c) {
    pl[static_cast<std::size_t>(c)] = split_logits(row, c);
    pm[static_cast<std::size_t>(c)] = c <= layer_count;
  }
  nn::MaskedCategorical server(sl, sm), split(pl, pm);
  UserDraw d;
  d.action.server = rng ? server.sample(*rng) : server.mode();
  d.action.split = rng ? split.sample(*rng) : split.mode();
  d.log_prob = server.log_prob(d.action.server) + split.log_prob(d.action.split);
  d.entropy = server.entropy() + split.entropy();
  return d;
}

/// Actions of all users for the current slot of `env`.
inline std::vector<UserDraw> user_policy_act(const UserActor& actor, const Environment& env, Rng* rng) {
  const auto& reqs = env.requests();
  const auto K = static_cast<Index>(reqs.size());
  const auto vx = env.deployment().vec();
  std::vector<int> models;
  Matrix batch(K, 1), vec_x(K, static_cast<Index>(vx.size()));
  for (Index k = 0; k < K; ++k) {
    const auto& r = reqs[static_cast<std::size_t>(k)];
    models.push_back(r.model);
    batch(k, 0) = env.batch_feature(r.batch);
    for (std::size_t n = 0; n < vx.size(); ++n) vec_x(k, static_cast<Index>(n)) = vx[n];
  }
  Tape t;
  const auto logits = actor.forward(t, models, batch, vec_x);
  std::vector<UserDraw> out;
  for (Index k = 0; k < K; ++k) {
    const int L = env.catalog()[static_cast<std::size_t>(models[static_cast<std::size_t>(k)])].layer_count();
    out.push_back(user_draw_from_logits(logits.server.value(), logits.split.value(), k, L, rng));
  }
  return out;
}

/// Allocation observation of one server in the per-user layout the network
/// reads: o^alloc plus per-user (model, batch, split) features and the mask of
/// associated users.
struct AllocInput {
  std::vector<double> obs;    // 3K
  std::vector<double> mask;   // K, 1 for associated users
  std::vector<int> models;    // K
  std::vector<double> batch;  // K
  std::vector<double> split;  // K
  bool active() const {
    for (double m : mask) {
      if (m != 0.0) return true;
    }
    return false;
  }
};

inline AllocInput alloc_input(const Environment& env, int j, const std::vector<UserAction>& actions) {
  const int K = env.num_users();
  AllocInput in;
  in.obs = env.alloc_obs(j, actions);
  in.mask.assign(static_cast<std::size_t>(K), 0.0);
  in.batch.assign(static_cast<std::size_t>(K), 0.0);
  in.split.assign(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    in.models.push_back(env.requests()[ku].model);
    if (actions[ku].server != j) continue;
    in.mask[ku] = 1.0;
    in.batch[ku] = in.obs[static_cast<std::size_t>(K) + ku];
    in.split[ku] = in.obs[static_cast<std::size_t>(2 * K) + ku];
  }
  return in;
}

struct AllocBatch {
  Matrix obs, mask, batch, split;
  std::vector<int> models;
};

inline AllocBatch stack_alloc_inputs(const std::vector<const AllocInput*>& ins) {
  const auto R = static_cast<Index>(ins.size());
  const auto K = static_cast<Index>(ins.front()->mask.size());
  AllocBatch b{Matrix(R, 3 * K), Matrix(R, K), Matrix(R * K, 1), Matrix(R * K, 1), {}};
  b.models.reserve(static_cast<std::size_t>(R * K));
  for (Index r = 0; r < R; ++r) {
    const auto& in = *ins[static_cast<std::size_t>(r)];
    for (Index c = 0; c < 3 * K; ++c) b.obs(r, c) = in.obs[static_cast<std::size_t>(c)];
    for (Index k = 0; k < K; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      b.mask(r, k) = in.mask[ku];
      b.batch(r * K + k, 0) = in.batch[ku];
      b.split(r * K + k, 0) = in.split[ku];
      b.models.push_back(in.models[ku]);
    }
  }
  return b;
}

struct AllocDraw {
  std::vector<double> comp;         // simplex weights over associated users
  std::vector<double> band;
  std::vector<double> action_comp;  // perturbed scores (the PPO action)
  std::vector<double> action_band;
  double log_prob = 0.0;
};

/// Attention weights for a set of servers. With explore, Gaussian noise of
/// the learned scale perturbs the scores before the softmax.
inline std::vector<AllocDraw> alloc_policy_act(const AllocNet& net, const std::vector<const AllocInput*>& ins, Rng* rng,
                                               bool explore) {
  std::vector<AllocDraw> out(ins.size());
  if (ins.empty()) return out;
  const auto b = stack_alloc_inputs(ins);
  Tape t;
  const auto s = net.scores(t, b.obs, b.models, b.batch, b.split);
  const Index K = b.mask.cols();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t r = 0; r < ins.size(); ++r) {
    auto& d = out[r];
    std::vector<bool> active(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k) active[static_cast<std::size_t>(k)] = b.mask(static_cast<Index>(r), k) != 0.0;
    if (!ins[r]->active()) {
      d.comp.assign(static_cast<std::size_t>(K), 0.0);
      d.band = d.comp;
      d.action_comp = d.comp;
      d.action_band = d.comp;
      continue;
    }
    for (int branch = 0; branch < 2; ++branch) {
      const Matrix& sv = branch == 0 ? s.comp.value() : s.band.value();
      const double ls = net.log_std_value(branch);
      const double sd = std::exp(ls);
      std::vector<double> a(static_cast<std::size_t>(K), 0.0);
      for (Index k = 0; k < K; ++k) {
        if (!active[static_cast<std::size_t>(k)]) continue;
        const double mean = sv(static_cast<Index>(r), k);
        const double eps = explore && rng ? rng->normal() : 0.0;
        a[static_cast<std::size_t>(k)] = mean + sd * eps;
        d.log_prob += -0.5 * eps * eps - ls - half_log_2pi;
      }
      auto w = nn::softmax_active(a, active);
      (branch == 0 ? d.comp : d.band) = std::move(w);
      (branch == 0 ? d.action_comp : d.action_band) = std::move(a);
    }
  }
  return out;
}

}  // namespace edgesplit::marl
