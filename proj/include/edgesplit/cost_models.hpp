#pragma once

// Per-user delay, energy and privacy cost, and the per-slot system cost.
// Volumes are bytes, rates bits/s, workloads FLOPs, capacities FLOP/s.

#include <cmath>
#include <limits>
#include <numeric>
#include <span>

#include "edgesplit/error.hpp"
#include "edgesplit/model_profiles.hpp"

namespace edgesplit {

inline constexpr double kBitsPerByte = 8.0;
inline constexpr double kBytesPerMegabyte = 1e6;

struct DelayBreakdown {
  double download_s = 0.0;
  double local_s = 0.0;
  double upload_s = 0.0;
  double edge_s = 0.0;
  double total_s = 0.0;
  bool failed = false;
};

struct CostWeights {
  double mu1 = 5.0;  // privacy
  double mu2 = 5.0;  // energy
  double mu3 = 10.0;  // delay violation in the user reward
  double alpha1 = 0.31;
  double alpha2 = 1.88;
  double tau_bar = 3.0;
  double tau_fail = 15.0;
  double r_fail = -50.0;

  void validate() const {
    if (mu1 < 0 || mu2 < 0 || mu3 < 0 || alpha1 < 0 || alpha2 < 0) {
      throw ConfigError("cost weights must be non-negative");
    }
    if (!(tau_bar > 0.0)) throw ConfigError("tau_bar must be positive");
    if (!(tau_fail > tau_bar)) throw ConfigError("tau_fail must exceed tau_bar");
  }
};

namespace detail {

/// volume / rate with the zero-volume and infinite-rate conventions.
inline double transfer_time(double volume, double rate, const char* what) {
  if (volume <= 0.0) return 0.0;
  if (!(rate > 0.0)) throw InfeasibleLinkError(std::string(what) + ": positive volume over a zero-rate link");
  if (std::isinf(rate)) return 0.0;
  return volume / rate;
}

}  // namespace detail

inline DelayBreakdown delay_components(const PartitionSummary& summary, int batch, double rate_down, double rate_up,
                                       double f_user, double f_alloc, bool hit, double tau_fail) {
  DelayBreakdown d;
  if (!hit) {
    d.total_s = tau_fail;
    d.failed = true;
    return d;
  }
  const double n = batch;
  d.download_s = detail::transfer_time(kBitsPerByte * static_cast<double>(summary.download_bytes), rate_down,
                                       "parameter download");
  d.local_s = detail::transfer_time(n * static_cast<double>(summary.local_flops), f_user, "local compute");
  d.upload_s = detail::transfer_time(kBitsPerByte * n * static_cast<double>(summary.upload_bytes), rate_up,
                                     "feature upload");
  d.edge_s = detail::transfer_time(n * static_cast<double>(summary.edge_flops), f_alloc, "edge compute");
  d.total_s = d.download_s + d.local_s + d.upload_s + d.edge_s;
  return d;
}

/// Device-side energy: compute energy plus radio energy of the feature upload.
inline double energy(const PartitionSummary& summary, int batch, double eps, double p_user_w, double upload_s) {
  return eps * batch * static_cast<double>(summary.local_flops) + p_user_w * upload_s;
}

inline double privacy_cost(double leakage, double pre_k, int batch, double raw_mb, const CostWeights& w) {
  return (w.alpha1 + w.alpha2 * pre_k) * leakage * batch * raw_mb;
}

inline double mean_of(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

/// Weighted privacy + energy system cost of one slot.
inline double slot_cost(std::span<const double> per_user_energy, std::span<const double> per_user_privacy,
                        const CostWeights& w) {
  if (per_user_energy.empty() || per_user_privacy.empty()) throw DomainError("slot_cost: empty user lists");
  if (per_user_energy.size() != per_user_privacy.size()) throw DomainError("slot_cost: list lengths differ");
  return w.mu1 * mean_of(per_user_privacy) + w.mu2 * mean_of(per_user_energy);
}

}  // namespace edgesplit
