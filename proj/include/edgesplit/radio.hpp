#pragma once

#include <algorithm>
#include <cmath>

#include "edgesplit/error.hpp"

namespace edgesplit {

struct ChannelParams {
  double pathloss_exponent = 3.5;
  double ref_loss_db = 30.0;  // at 1 m
  double shadow_sigma_db = 8.0;
  double noise_figure_db = 6.0;
  double carrier_ghz = 3.5;  // informational; ref_loss_db already accounts for it
  double server_tx_power_dbm_lo = 30.0;
  double server_tx_power_dbm_hi = 43.0;
  double user_tx_power_dbm_lo = 20.0;
  double user_tx_power_dbm_hi = 30.0;

  void validate() const {
    if (!(pathloss_exponent > 0.0)) throw ConfigError("channel: pathloss_exponent must be > 0");
    if (!(shadow_sigma_db >= 0.0)) throw ConfigError("channel: shadow_sigma_db must be >= 0");
    if (server_tx_power_dbm_lo > server_tx_power_dbm_hi) throw ConfigError("channel: empty server power range");
    if (user_tx_power_dbm_lo > user_tx_power_dbm_hi) throw ConfigError("channel: empty user power range");
  }
};

/// Thermal noise floor.
inline constexpr double kThermalNoiseDbmPerHz = -174.0;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

/// Path loss plus a shadowing draw (dB), as a linear power gain. Distances
/// below 1 m are clamped to the reference distance.
inline double path_gain(double distance_m, double shadow_db, const ChannelParams& params) {
  const double d = std::max(distance_m, 1.0);
  const double loss_db = params.ref_loss_db + 10.0 * params.pathloss_exponent * std::log10(d) + shadow_db;
  return std::pow(10.0, -loss_db / 10.0);
}

/// Receiver noise power over the given bandwidth, watts.
inline double noise_power(double bandwidth_hz, const ChannelParams& params) {
  if (bandwidth_hz <= 0.0) return 0.0;
  const double dbm = kThermalNoiseDbmPerHz + 10.0 * std::log10(bandwidth_hz) + params.noise_figure_db;
  return dbm_to_watts(dbm);
}

/// Shannon capacity in bits/s.
inline double shannon_rate(double bandwidth_hz, double tx_power_w, double gain, double noise_w) {
  if (bandwidth_hz <= 0.0) return 0.0;
  if (!(noise_w > 0.0)) throw DomainError("shannon_rate: noise power must be positive for a non-empty band");
  return bandwidth_hz * std::log2(1.0 + tx_power_w * gain / noise_w);
}

/// Rate over an allocated band, with the noise realized over that same band.
inline double link_rate(double bandwidth_hz, double tx_power_w, double gain, const ChannelParams& params) {
  if (bandwidth_hz <= 0.0) return 0.0;
  return shannon_rate(bandwidth_hz, tx_power_w, gain, noise_power(bandwidth_hz, params));
}

}  // namespace edgesplit
