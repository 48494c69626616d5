#pragma once

// Heuristic deployment / offloading rules and the named algorithm presets
// (the full method, its ablations and the heuristic baselines).

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgesplit/cost_models.hpp"
#include "edgesplit/env.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/model_profiles.hpp"
#include "edgesplit/radio.hpp"

namespace edgesplit {

// ---------------------------------------------------------------------------
// Algorithm specification
// ---------------------------------------------------------------------------

enum class AssociationRule { strongest, strongest_with_model, learned };
enum class PartitionRule { full_local, full_edge, greedy_deepest, learned };
enum class AllocationRule { equal_share, learned };
enum class DeploymentRule { popularity, lru, learned };
enum class ConstraintHandling { none, lagrangian };
enum class CriticScope { centralized, local };

struct AlgorithmSpec {
  std::string name;
  AssociationRule association = AssociationRule::learned;
  PartitionRule partition = PartitionRule::learned;
  AllocationRule allocation = AllocationRule::learned;
  DeploymentRule deployment = DeploymentRule::learned;
  ConstraintHandling constraint = ConstraintHandling::lagrangian;
  CriticScope critic = CriticScope::centralized;
  /// Drops the delay-violation term of the user reward (unconstrained ablations).
  bool zero_delay_penalty = false;

  bool learns_users() const { return partition == PartitionRule::learned; }
  bool learns_alloc() const { return allocation == AllocationRule::learned; }
  bool learns_deploy() const { return deployment == DeploymentRule::learned; }
  bool learns_anything() const { return learns_users() || learns_alloc() || learns_deploy(); }
  bool lagrangian() const { return constraint == ConstraintHandling::lagrangian; }
  bool operator==(const AlgorithmSpec&) const = default;
};

namespace algorithms {

inline AlgorithmSpec hc_mappo_l() { return {"HC-MAPPO-L"}; }

inline AlgorithmSpec h_mappo() {
  AlgorithmSpec s{"H-MAPPO"};
  s.constraint = ConstraintHandling::none;
  s.zero_delay_penalty = true;
  return s;
}

inline AlgorithmSpec hc_ippo_l() {
  AlgorithmSpec s{"HC-IPPO-L"};
  s.critic = CriticScope::local;
  return s;
}

inline AlgorithmSpec h_ippo() {
  AlgorithmSpec s{"H-IPPO"};
  s.constraint = ConstraintHandling::none;
  s.zero_delay_penalty = true;
  s.critic = CriticScope::local;
  return s;
}

inline AlgorithmSpec heuristic_mappo_l() {
  AlgorithmSpec s{"Heuristic-MAPPO-L"};
  s.allocation = AllocationRule::equal_share;
  s.deployment = DeploymentRule::lru;
  return s;
}

inline AlgorithmSpec heuristic(const char* name, AssociationRule a, PartitionRule p) {
  AlgorithmSpec s{name};
  s.association = a;
  s.partition = p;
  s.allocation = AllocationRule::equal_share;
  s.deployment = DeploymentRule::popularity;
  s.constraint = ConstraintHandling::none;
  return s;
}

inline AlgorithmSpec greedy() {
  return heuristic("Greedy", AssociationRule::strongest_with_model, PartitionRule::greedy_deepest);
}
inline AlgorithmSpec local_only() { return heuristic("Local-Only", AssociationRule::strongest, PartitionRule::full_local); }
inline AlgorithmSpec edge_only() { return heuristic("Edge-Only", AssociationRule::strongest, PartitionRule::full_edge); }

inline std::vector<AlgorithmSpec> all() {
  return {hc_mappo_l(), h_mappo(), hc_ippo_l(), h_ippo(), heuristic_mappo_l(), greedy(), local_only(), edge_only()};
}

inline std::vector<std::string> names() {
  std::vector<std::string> out;
  for (const auto& s : all()) out.push_back(s.name);
  return out;
}

inline AlgorithmSpec by_name(const std::string& name) {
  for (const auto& s : all()) {
    if (s.name == name) return s;
  }
  std::string known;
  for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown algorithm '" + name + "' (known: " + known + ")");
}

/// Name of the preset a rule combination corresponds to, if any.
inline std::optional<std::string> identify(AlgorithmSpec s) {
  for (const auto& p : all()) {
    s.name = p.name;
    if (s == p) return p.name;
  }
  return std::nullopt;
}

}  // namespace algorithms

inline void validate_spec(const AlgorithmSpec& s) {
  if (!algorithms::identify(s)) throw ConfigError("rule combination of '" + s.name + "' matches no known algorithm");
  if ((s.association == AssociationRule::learned) != (s.partition == PartitionRule::learned)) {
    throw ConfigError("association and partition are one joint user action: learn both or neither");
  }
}

// ---------------------------------------------------------------------------
// Deployment heuristics
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> fill_in_order(const std::vector<int>& order, double storage,
                                      std::span<const std::int64_t> sizes) {
  std::vector<int> chosen;
  double left = storage;
  for (int i : order) {
    const double b = static_cast<double>(sizes[static_cast<std::size_t>(i)]);
    if (b <= left) {
      chosen.push_back(i);
      left -= b;
    }
  }
  return chosen;
}

}  // namespace detail

/// Most requested first (ties to the lower id), skipping models that no
/// longer fit.
inline std::vector<int> popularity_deploy(std::span<const double> counts, double storage,
                                          std::span<const std::int64_t> sizes) {
  if (counts.size() != sizes.size()) throw DomainError("popularity_deploy: counts and sizes differ in length");
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  return detail::fill_in_order(order, storage, sizes);
}

/// Most recently used first; never-used models (timestamp < 0) last, by id.
inline std::vector<int> lru_deploy(std::span<const int> last_access, double storage,
                                   std::span<const std::int64_t> sizes) {
  if (last_access.size() != sizes.size()) throw DomainError("lru_deploy: timestamps and sizes differ in length");
  std::vector<int> order(last_access.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return last_access[static_cast<std::size_t>(a)] > last_access[static_cast<std::size_t>(b)];
  });
  return detail::fill_in_order(order, storage, sizes);
}

// ---------------------------------------------------------------------------
// Offloading heuristics
// ---------------------------------------------------------------------------

/// Delay of every partition point under fixed resource shares.
inline std::vector<double> split_delays(const ModelProfile& profile, int batch, double f_user, double f_share,
                                        double rate_down, double rate_up) {
  std::vector<double> out;
  for (int l = 0; l <= profile.layer_count(); ++l) {
    out.push_back(
        delay_components(partition_summary(profile, l), batch, rate_down, rate_up, f_user, f_share, true, 0.0).total_s);
  }
  return out;
}

/// Deepest l with τ(l) <= τ̄; argmin τ(l) (lowest l on ties) if none is feasible.
inline int greedy_split(std::span<const double> delays, double tau_bar) {
  for (std::size_t l = delays.size(); l-- > 0;) {
    if (delays[l] <= tau_bar) return static_cast<int>(l);
  }
  return static_cast<int>(std::min_element(delays.begin(), delays.end()) - delays.begin());
}

/// Per-user actions of the heuristic association/partition rules for the
/// current slot of `env`.
inline std::vector<UserAction> heuristic_user_actions(const Environment& env, const AlgorithmSpec& spec) {
  const auto& reqs = env.requests();
  const int K = env.num_users();
  std::vector<UserAction> acts(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const int model = reqs[static_cast<std::size_t>(k)].model;
    int j = -1;
    if (spec.association == AssociationRule::strongest_with_model) j = env.strongest_server(k, model);
    if (j < 0) j = env.strongest_server(k);
    acts[static_cast<std::size_t>(k)].server = j;
  }
  std::vector<int> members(static_cast<std::size_t>(env.num_servers()), 0);
  for (const auto& a : acts) ++members[static_cast<std::size_t>(a.server)];
  const auto& cfg = env.config();
  for (int k = 0; k < K; ++k) {
    auto& a = acts[static_cast<std::size_t>(k)];
    const auto& req = reqs[static_cast<std::size_t>(k)];
    const auto& profile = env.catalog()[static_cast<std::size_t>(req.model)];
    switch (spec.partition) {
      case PartitionRule::full_local:
        a.split = profile.layer_count();
        break;
      case PartitionRule::full_edge:
        a.split = 0;
        break;
      case PartitionRule::greedy_deepest: {
        const auto& srv = env.servers()[static_cast<std::size_t>(a.server)];
        const auto& usr = env.users()[static_cast<std::size_t>(k)];
        const double n = members[static_cast<std::size_t>(a.server)];
        const double band = srv.bandwidth_hz / n;
        const double g = env.gain(a.server, k);
        const auto delays = split_delays(profile, req.batch, usr.flops, srv.flops / n,
                                         link_rate(band, srv.tx_power_w, g, cfg.channel),
                                         link_rate(band, usr.tx_power_w, g, cfg.channel));
        a.split = greedy_split(delays, cfg.weights.tau_bar);
        break;
      }
      case PartitionRule::learned:
        throw DomainError("heuristic_user_actions: partition rule is learned");
    }
  }
  return acts;
}

/// Heuristic macro-actions for every server.
inline std::vector<std::vector<int>> heuristic_macros(const Environment& env, DeploymentRule rule) {
  std::vector<std::vector<int>> macros;
  for (int j = 0; j < env.num_servers(); ++j) {
    const double storage = env.servers()[static_cast<std::size_t>(j)].storage_bytes;
    if (rule == DeploymentRule::popularity) {
      macros.push_back(popularity_deploy(env.cumulative_requests()[static_cast<std::size_t>(j)], storage, env.model_bytes()));
    } else if (rule == DeploymentRule::lru) {
      macros.push_back(lru_deploy(env.last_access()[static_cast<std::size_t>(j)], storage, env.model_bytes()));
    } else {
      throw DomainError("heuristic_macros: deployment rule is learned");
    }
  }
  return macros;
}

}  // namespace edgesplit
