#pragma once

// Discrete-time simulator of edge-device collaborative inference.
//
// Per slot t the call order is:
//   if deployment_due(): deployment_phase(macros)   (every ΔT slots)
//   begin_slot()                                    (samples requests)
//   step(user_actions, alloc_actions)               (evaluates the slot)
//
// Deployment matrix entries are indexed (model i, server j); vec(X) is
// model-major: entry i*J + j.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "edgesplit/config.hpp"
#include "edgesplit/cost_models.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/model_profiles.hpp"
#include "edgesplit/radio.hpp"
#include "edgesplit/rng.hpp"

namespace edgesplit {

class DeploymentMatrix {
 public:
  DeploymentMatrix() = default;
  DeploymentMatrix(int models, int servers) : models_(models), servers_(servers), x_(static_cast<std::size_t>(models * servers), 0) {}

  int models() const { return models_; }
  int servers() const { return servers_; }
  bool operator()(int i, int j) const { return x_[index(i, j)] != 0; }
  void set(int i, int j, bool v) { x_[index(i, j)] = v ? 1 : 0; }

  void clear_server(int j) {
    for (int i = 0; i < models_; ++i) set(i, j, false);
  }
  std::vector<double> vec() const { return std::vector<double>(x_.begin(), x_.end()); }
  bool operator==(const DeploymentMatrix&) const = default;

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i * servers_ + j); }
  int models_ = 0;
  int servers_ = 0;
  std::vector<std::uint8_t> x_;
};

struct Request {
  int user = 0;
  int model = 0;
  int batch = 1;
};

struct UserAction {
  int server = 0;
  int split = 0;
};

/// Per-server allocation weights indexed by user (length K). Only entries
/// of associated users are used; they are renormalized over that set.
struct AllocAction {
  std::vector<double> comp;
  std::vector<double> band;
};

struct UserOutcome {
  int model = 0;
  int batch = 1;
  int server = 0;
  int split = 0;
  bool hit = false;
  DelayBreakdown delay;
  double energy = 0.0;
  double privacy = 0.0;
  double reward = 0.0;
  double cost = 0.0;  // constraint cost c_k = τ_k
  bool deadline_met = false;
};

struct SlotOutcome {
  int slot = 0;
  std::vector<UserOutcome> users;
  std::vector<std::vector<int>> associated;  // per server
  std::vector<std::vector<double>> f_alloc;  // [j][k], FLOP/s
  std::vector<std::vector<double>> b_alloc;  // [j][k], Hz
  std::vector<double> alloc_rewards;         // per server
  std::optional<std::vector<double>> deploy_rewards;  // set on the last slot of an interval
  bool episode_done = false;

  double mean_delay() const;
  double mean_energy() const;
  double mean_privacy() const;
};

// ---------------------------------------------------------------------------
// Request generation
// ---------------------------------------------------------------------------

/// Rank-r probability ∝ r^-s for r = 1..I; rank r is model id r-1.
inline std::vector<double> zipf_probabilities(double s, int num_models) {
  if (num_models < 1) throw DomainError("zipf: need at least one model");
  std::vector<double> p(static_cast<std::size_t>(num_models));
  double z = 0.0;
  for (int r = 1; r <= num_models; ++r) {
    p[static_cast<std::size_t>(r - 1)] = std::pow(static_cast<double>(r), -s);
    z += p[static_cast<std::size_t>(r - 1)];
  }
  for (auto& v : p) v /= z;
  return p;
}

inline int sample_from_cdf(Rng& rng, std::span<const double> cdf) {
  const double u = rng.uniform01();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) return static_cast<int>(cdf.size()) - 1;
  return static_cast<int>(it - cdf.begin());
}

inline std::vector<Request> sample_requests(Rng& rng, double zipf_s, int num_models, int num_users, int batch_min = 1,
                                            int batch_max = 4) {
  const auto p = zipf_probabilities(zipf_s, num_models);
  std::vector<double> cdf(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) cdf[i] = (acc += p[i]);
  std::vector<Request> out;
  out.reserve(static_cast<std::size_t>(num_users));
  for (int k = 0; k < num_users; ++k) {
    Request r;
    r.user = k;
    r.model = sample_from_cdf(rng, cdf);
    r.batch = rng.uniform_int(batch_min, batch_max);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reward pieces
// ---------------------------------------------------------------------------

inline double user_reward(const UserOutcome& o, const CostWeights& w) {
  if (!o.hit) return w.r_fail;
  return -(w.mu1 * o.privacy + w.mu2 * o.energy + w.mu3 * std::max(o.delay.total_s - w.tau_bar, 0.0));
}

/// Negative mean delay of the associated users; 0 for an idle server.
inline double alloc_reward(std::span<const double> associated_delays) {
  if (associated_delays.empty()) return 0.0;
  return -mean_of(associated_delays);
}

/// One slot of request history as seen by the hit counter.
struct SlotServiceRecord {
  std::vector<int> server;  // per user
  std::vector<int> model;   // per user
  DeploymentMatrix deployment;
};

/// Cache hits of server j over an interval: requests from associated users
/// for a model deployed on j.
inline int hit_count(std::span<const SlotServiceRecord> interval, int j) {
  int hits = 0;
  for (const auto& slot : interval) {
    for (std::size_t k = 0; k < slot.server.size(); ++k) {
      if (slot.server[k] == j && slot.deployment(slot.model[k], j)) ++hits;
    }
  }
  return hits;
}

/// Seconds spent fetching newly deployed models of server j from the cloud.
inline double migration_cost(const DeploymentMatrix& x_new, const DeploymentMatrix& x_old, int j,
                             std::span<const std::int64_t> model_bytes, double cloud_rate_bps) {
  double seconds = 0.0;
  for (int i = 0; i < x_new.models(); ++i) {
    if (x_new(i, j) && !x_old(i, j)) {
      seconds += kBitsPerByte * static_cast<double>(model_bytes[static_cast<std::size_t>(i)]) / cloud_rate_bps;
    }
  }
  return seconds;
}

inline double deploy_reward(int hits, double migration_s, double mu_hit, double mu_mig) {
  return mu_hit * hits - mu_mig * migration_s;
}

inline double SlotOutcome::mean_delay() const {
  double s = 0.0;
  for (const auto& u : users) s += u.delay.total_s;
  return users.empty() ? 0.0 : s / static_cast<double>(users.size());
}
inline double SlotOutcome::mean_energy() const {
  double s = 0.0;
  for (const auto& u : users) s += u.energy;
  return users.empty() ? 0.0 : s / static_cast<double>(users.size());
}
inline double SlotOutcome::mean_privacy() const {
  double s = 0.0;
  for (const auto& u : users) s += u.privacy;
  return users.empty() ? 0.0 : s / static_cast<double>(users.size());
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Grid centers for J servers: ceil(sqrt(J)) columns, row-major fill.
inline std::vector<Point> grid_positions(int servers, double area) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(servers))));
  const int rows = (servers + cols - 1) / cols;
  std::vector<Point> out;
  for (int n = 0; n < servers; ++n) {
    const int r = n / cols;
    const int c = n % cols;
    out.push_back({area * (c + 0.5) / cols, area * (r + 0.5) / rows});
  }
  return out;
}

struct ServerState {
  Point pos;
  double flops = 0.0;
  double bandwidth_hz = 0.0;
  double storage_bytes = 0.0;
  double cloud_rate_bps = 0.0;
  double tx_power_w = 0.0;
};

struct UserState {
  Point pos;
  double flops = 0.0;
  double privacy_pref = 0.0;
  double energy_per_flop = 0.0;
  double tx_power_w = 0.0;
};

class Environment {
 public:
  Environment(SystemConfig config, std::shared_ptr<const Catalog> catalog)
      : cfg_(std::move(config)), catalog_(std::move(catalog)) {
    cfg_.validate();
    if (!catalog_ || catalog_->empty()) throw ConfigError("environment needs a non-empty catalog");
    if (cfg_.catalog_path.empty() && static_cast<int>(catalog_->size()) != cfg_.num_models()) {
      throw ConfigError("catalog size " + std::to_string(catalog_->size()) + " does not match configured I = " +
                        std::to_string(cfg_.num_models()));
    }
    for (const auto& p : *catalog_) {
      model_bytes_.push_back(p.total_bytes);
      max_layers_ = std::max(max_layers_, p.layer_count());
    }
  }

  void reset(std::uint64_t seed) {
    Rng rng(seed);
    const int J = num_servers(), K = num_users(), I = num_models();
    servers_.assign(static_cast<std::size_t>(J), {});
    users_.assign(static_cast<std::size_t>(K), {});
    const auto grid = grid_positions(J, cfg_.area_m);
    for (int j = 0; j < J; ++j) {
      auto& s = servers_[static_cast<std::size_t>(j)];
      s.pos = grid[static_cast<std::size_t>(j)];
      s.flops = rng.uniform(cfg_.server_flops.lo, cfg_.server_flops.hi);
      s.bandwidth_hz = rng.uniform(cfg_.server_bandwidth_hz.lo, cfg_.server_bandwidth_hz.hi);
      s.storage_bytes = rng.uniform(cfg_.server_storage_bytes.lo, cfg_.server_storage_bytes.hi);
      s.cloud_rate_bps = rng.uniform(cfg_.cloud_rate_bps.lo, cfg_.cloud_rate_bps.hi);
      s.tx_power_w = dbm_to_watts(rng.uniform(cfg_.channel.server_tx_power_dbm_lo, cfg_.channel.server_tx_power_dbm_hi));
    }
    for (int k = 0; k < K; ++k) {
      auto& u = users_[static_cast<std::size_t>(k)];
      u.pos = {rng.uniform(0.0, cfg_.area_m), rng.uniform(0.0, cfg_.area_m)};
      u.flops = rng.uniform(cfg_.user_flops.lo, cfg_.user_flops.hi);
      u.privacy_pref = rng.uniform(cfg_.privacy_pref.lo, cfg_.privacy_pref.hi);
      u.energy_per_flop = rng.uniform(cfg_.energy_per_flop.lo, cfg_.energy_per_flop.hi);
      u.tx_power_w = dbm_to_watts(rng.uniform(cfg_.channel.user_tx_power_dbm_lo, cfg_.channel.user_tx_power_dbm_hi));
    }
    gain_.assign(static_cast<std::size_t>(J), std::vector<double>(static_cast<std::size_t>(K)));
    for (int j = 0; j < J; ++j) {
      for (int k = 0; k < K; ++k) {
        const auto& sp = servers_[static_cast<std::size_t>(j)].pos;
        const auto& up = users_[static_cast<std::size_t>(k)].pos;
        const double d = std::hypot(sp.x - up.x, sp.y - up.y);
        const double shadow = cfg_.channel.shadow_sigma_db > 0.0 ? rng.normal(0.0, cfg_.channel.shadow_sigma_db) : 0.0;
        gain_[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = path_gain(d, shadow, cfg_.channel);
      }
    }
    request_rng_ = rng.split(1);
    x_ = DeploymentMatrix(I, J);
    x_prev_ = DeploymentMatrix(I, J);
    slot_ = 0;
    deployed_this_slot_ = false;
    slot_open_ = false;
    requests_.clear();
    pending_migration_.assign(static_cast<std::size_t>(J), 0.0);
    interval_hits_.assign(static_cast<std::size_t>(J), 0);
    current_r_.assign(static_cast<std::size_t>(I), 0.0);
    window_r_.assign(static_cast<std::size_t>(I), 0.0);
    current_h_.assign(static_cast<std::size_t>(J), std::vector<double>(static_cast<std::size_t>(I), 0.0));
    window_h_ = current_h_;
    cumulative_h_ = current_h_;
    last_access_.assign(static_cast<std::size_t>(J), std::vector<int>(static_cast<std::size_t>(I), -1));
  }

  // -- static facts ---------------------------------------------------------
  const SystemConfig& config() const { return cfg_; }
  const Catalog& catalog() const { return *catalog_; }
  std::shared_ptr<const Catalog> catalog_ptr() const { return catalog_; }
  int num_servers() const { return cfg_.num_servers; }
  int num_users() const { return cfg_.num_users; }
  int num_models() const { return static_cast<int>(catalog_->size()); }
  int max_layers() const { return max_layers_; }
  const std::vector<std::int64_t>& model_bytes() const { return model_bytes_; }
  const std::vector<ServerState>& servers() const { return servers_; }
  const std::vector<UserState>& users() const { return users_; }
  double gain(int j, int k) const { return gain_[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]; }

  // -- dynamic state --------------------------------------------------------
  int slot() const { return slot_; }
  bool done() const { return slot_ >= cfg_.episode_slots; }
  const DeploymentMatrix& deployment() const { return x_; }
  const DeploymentMatrix& previous_deployment() const { return x_prev_; }
  bool deployment_due() const { return !done() && slot_ % cfg_.deploy_interval == 0 && !deployed_this_slot_; }
  const std::vector<Request>& requests() const { return requests_; }
  const std::vector<std::vector<double>>& cumulative_requests() const { return cumulative_h_; }
  const std::vector<std::vector<int>>& last_access() const { return last_access_; }

  double storage_used(int j, const DeploymentMatrix& x) const {
    double used = 0.0;
    for (int i = 0; i < num_models(); ++i) {
      if (x(i, j)) used += static_cast<double>(model_bytes_[static_cast<std::size_t>(i)]);
    }
    return used;
  }

  /// Installs one macro-action per server; previous X is kept for the
  /// migration cost. Throws StorageOverflowError when a server exceeds its storage.
  void deployment_phase(const std::vector<std::vector<int>>& macros) {
    if (!deployment_due()) throw DomainError("deployment_phase called outside a deployment slot");
    const int J = num_servers(), I = num_models();
    if (static_cast<int>(macros.size()) != J) throw DomainError("deployment_phase: need one macro-action per server");
    DeploymentMatrix next(I, J);
    for (int j = 0; j < J; ++j) {
      std::set<int> seen;
      double used = 0.0;
      for (int i : macros[static_cast<std::size_t>(j)]) {
        if (i < 0 || i >= I) throw DomainError("deployment_phase: model index out of range");
        if (!seen.insert(i).second) throw DomainError("deployment_phase: model selected twice");
        used += static_cast<double>(model_bytes_[static_cast<std::size_t>(i)]);
        next.set(i, j, true);
      }
      if (used > servers_[static_cast<std::size_t>(j)].storage_bytes) {
        throw StorageOverflowError("server " + std::to_string(j) + ": macro-action needs " + std::to_string(used) +
                                   " B but storage is " +
                                   std::to_string(servers_[static_cast<std::size_t>(j)].storage_bytes) + " B");
      }
    }
    x_prev_ = x_;
    x_ = next;
    for (int j = 0; j < J; ++j) {
      pending_migration_[static_cast<std::size_t>(j)] =
          migration_cost(x_, x_prev_, j, model_bytes_, servers_[static_cast<std::size_t>(j)].cloud_rate_bps);
      interval_hits_[static_cast<std::size_t>(j)] = 0;
    }
    deployed_this_slot_ = true;
  }

  const std::vector<Request>& begin_slot() {
    if (done()) throw DomainError("episode finished; call reset()");
    if (deployment_due()) throw DomainError("deployment is due before this slot can start");
    if (!slot_open_) {
      requests_ = sample_requests(request_rng_, cfg_.zipf_s, num_models(), num_users(), cfg_.batch_min, cfg_.batch_max);
      slot_open_ = true;
    }
    return requests_;
  }

  /// Equal-share allocation over the associated users of every server.
  std::vector<AllocAction> equal_share(const std::vector<UserAction>& actions) const {
    std::vector<AllocAction> out(static_cast<std::size_t>(num_servers()));
    for (auto& a : out) {
      a.comp.assign(static_cast<std::size_t>(num_users()), 0.0);
      a.band.assign(static_cast<std::size_t>(num_users()), 0.0);
    }
    for (int k = 0; k < num_users(); ++k) {
      const int j = actions[static_cast<std::size_t>(k)].server;
      if (j < 0 || j >= num_servers()) continue;
      out[static_cast<std::size_t>(j)].comp[static_cast<std::size_t>(k)] = 1.0;
      out[static_cast<std::size_t>(j)].band[static_cast<std::size_t>(k)] = 1.0;
    }
    return out;
  }

  /// Trace lines: slot,user,model,batch,server,split,download,local,upload,edge,
  /// total_delay,energy,privacy,hit.
  SlotOutcome step(const std::vector<UserAction>& actions, const std::vector<AllocAction>& alloc,
                   std::ostream* trace = nullptr) {
    if (!slot_open_) throw DomainError("step() before begin_slot()");
    const int J = num_servers(), K = num_users();
    validate_actions(actions, alloc);

    SlotOutcome out;
    out.slot = slot_;
    out.associated.assign(static_cast<std::size_t>(J), {});
    for (int k = 0; k < K; ++k) out.associated[static_cast<std::size_t>(actions[static_cast<std::size_t>(k)].server)].push_back(k);
    out.f_alloc.assign(static_cast<std::size_t>(J), std::vector<double>(static_cast<std::size_t>(K), 0.0));
    out.b_alloc = out.f_alloc;
    for (int j = 0; j < J; ++j) {
      const auto& members = out.associated[static_cast<std::size_t>(j)];
      const auto& srv = servers_[static_cast<std::size_t>(j)];
      split_capacity(members, alloc[static_cast<std::size_t>(j)].comp, srv.flops, out.f_alloc[static_cast<std::size_t>(j)]);
      split_capacity(members, alloc[static_cast<std::size_t>(j)].band, srv.bandwidth_hz, out.b_alloc[static_cast<std::size_t>(j)]);
    }

    const auto& w = cfg_.weights;
    out.users.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      const auto& req = requests_[static_cast<std::size_t>(k)];
      const auto& act = actions[static_cast<std::size_t>(k)];
      const auto& user = users_[static_cast<std::size_t>(k)];
      const auto& srv = servers_[static_cast<std::size_t>(act.server)];
      const auto& profile = (*catalog_)[static_cast<std::size_t>(req.model)];
      auto& o = out.users[static_cast<std::size_t>(k)];
      o.model = req.model;
      o.batch = req.batch;
      o.server = act.server;
      o.split = act.split;
      o.hit = x_(req.model, act.server);
      if (o.hit) {
        const auto summary = partition_summary(profile, act.split);
        const double band = out.b_alloc[static_cast<std::size_t>(act.server)][static_cast<std::size_t>(k)];
        const double f_alloc = out.f_alloc[static_cast<std::size_t>(act.server)][static_cast<std::size_t>(k)];
        const double g = gain(act.server, k);
        const double down = link_rate(band, srv.tx_power_w, g, cfg_.channel);
        const double up = link_rate(band, user.tx_power_w, g, cfg_.channel);
        try {
          o.delay = delay_components(summary, req.batch, down, up, user.flops, f_alloc, true, w.tau_fail);
          o.energy = energy(summary, req.batch, user.energy_per_flop, user.tx_power_w, o.delay.upload_s);
          o.privacy = privacy_cost(summary.leakage, user.privacy_pref, req.batch,
                                   static_cast<double>(profile.raw_input_bytes) / kBytesPerMegabyte, w);
        } catch (const InfeasibleLinkError&) {
          // Zero resources for a positive demand: the service cannot complete.
          o.hit = false;
        }
      }
      if (!o.hit) {
        o.delay = delay_components({}, req.batch, 0.0, 0.0, 0.0, 0.0, false, w.tau_fail);
        o.energy = 0.0;
        o.privacy = 0.0;
      }
      o.reward = user_reward(o, w);
      o.cost = o.delay.total_s;
      o.deadline_met = o.hit && o.delay.total_s <= w.tau_bar;
    }

    out.alloc_rewards.assign(static_cast<std::size_t>(J), 0.0);
    for (int j = 0; j < J; ++j) {
      std::vector<double> delays;
      for (int k : out.associated[static_cast<std::size_t>(j)]) delays.push_back(out.users[static_cast<std::size_t>(k)].delay.total_s);
      out.alloc_rewards[static_cast<std::size_t>(j)] = alloc_reward(delays);
    }

    // History counters.
    for (int k = 0; k < K; ++k) {
      const auto& o = out.users[static_cast<std::size_t>(k)];
      const auto j = static_cast<std::size_t>(o.server);
      const auto i = static_cast<std::size_t>(o.model);
      current_r_[i] += 1.0;
      current_h_[j][i] += 1.0;
      cumulative_h_[j][i] += 1.0;
      last_access_[j][i] = slot_;
      if (o.hit) ++interval_hits_[j];
    }

    if (trace) {
      const auto old_precision = trace->precision(17);
      for (int k = 0; k < K; ++k) {
        const auto& o = out.users[static_cast<std::size_t>(k)];
        *trace << slot_ << ',' << k << ',' << o.model << ',' << o.batch << ',' << o.server << ',' << o.split << ','
               << o.delay.download_s << ',' << o.delay.local_s << ',' << o.delay.upload_s << ',' << o.delay.edge_s << ','
               << o.delay.total_s << ',' << o.energy << ',' << o.privacy << ',' << (o.hit ? 1 : 0) << '\n';
      }
      trace->precision(old_precision);
    }

    ++slot_;
    slot_open_ = false;
    deployed_this_slot_ = false;
    if (slot_ % cfg_.deploy_interval == 0) {
      std::vector<double> rewards(static_cast<std::size_t>(J));
      for (int j = 0; j < J; ++j) {
        rewards[static_cast<std::size_t>(j)] =
            deploy_reward(interval_hits_[static_cast<std::size_t>(j)], pending_migration_[static_cast<std::size_t>(j)],
                          cfg_.mu_hit, cfg_.mu_mig);
      }
      out.deploy_rewards = std::move(rewards);
      window_r_ = current_r_;
      window_h_ = current_h_;
      std::fill(current_r_.begin(), current_r_.end(), 0.0);
      for (auto& row : current_h_) std::fill(row.begin(), row.end(), 0.0);
    }
    out.episode_done = done();
    return out;
  }

  // -- observations ---------------------------------------------------------

  /// [r, h_j, x_st] over the last completed interval, counts normalized by ΔT*K.
  std::vector<double> deploy_local_obs(int j, const std::vector<double>& x_st) const {
    const int I = num_models();
    if (static_cast<int>(x_st.size()) != I) throw ShapeError("deploy_local_obs: x_st must have I entries");
    const double norm = static_cast<double>(cfg_.deploy_interval) * num_users();
    std::vector<double> o;
    o.reserve(static_cast<std::size_t>(3 * I));
    for (double v : window_r_) o.push_back(v / norm);
    for (double v : window_h_[static_cast<std::size_t>(j)]) o.push_back(v / norm);
    o.insert(o.end(), x_st.begin(), x_st.end());
    return o;
  }

  /// Local view plus vec(X) of the deployment being replaced.
  std::vector<double> deploy_global_obs(int j, const std::vector<double>& x_st) const {
    auto o = deploy_local_obs(j, x_st);
    const auto v = x_.vec();
    o.insert(o.end(), v.begin(), v.end());
    return o;
  }

  /// Normalized model id in (0, 1]; zero is reserved for "no user".
  double model_feature(int model) const { return static_cast<double>(model + 1) / num_models(); }
  double batch_feature(int batch) const { return static_cast<double>(batch) / cfg_.batch_max; }
  double split_feature(int split, int model) const {
    return static_cast<double>(split + 1) / ((*catalog_)[static_cast<std::size_t>(model)].layer_count() + 1);
  }

  /// [n_mod, n_inp, vec(X)], length 2K + IJ.
  std::vector<double> user_global_obs() const {
    std::vector<double> o;
    o.reserve(static_cast<std::size_t>(2 * num_users() + num_models() * num_servers()));
    for (const auto& r : requests_) o.push_back(model_feature(r.model));
    for (const auto& r : requests_) o.push_back(batch_feature(r.batch));
    const auto v = x_.vec();
    o.insert(o.end(), v.begin(), v.end());
    return o;
  }

  /// [n_mod_j, n_inp_j, n_spl_j], length 3K, zero for users not on server j.
  std::vector<double> alloc_obs(int j, const std::vector<UserAction>& actions) const {
    const int K = num_users();
    std::vector<double> o(static_cast<std::size_t>(3 * K), 0.0);
    for (int k = 0; k < K; ++k) {
      const auto& a = actions[static_cast<std::size_t>(k)];
      if (a.server != j) continue;
      const auto& r = requests_[static_cast<std::size_t>(k)];
      o[static_cast<std::size_t>(k)] = model_feature(r.model);
      o[static_cast<std::size_t>(K + k)] = batch_feature(r.batch);
      o[static_cast<std::size_t>(2 * K + k)] = split_feature(a.split, r.model);
    }
    return o;
  }

  /// Strongest-gain server for user k (ties to the lower index), optionally
  /// restricted to servers holding `model`.
  int strongest_server(int k, int model = -1) const {
    int best = -1;
    for (int j = 0; j < num_servers(); ++j) {
      if (model >= 0 && !x_(model, j)) continue;
      if (best < 0 || gain(j, k) > gain(best, k)) best = j;
    }
    return best;
  }

 private:
  void validate_actions(const std::vector<UserAction>& actions, const std::vector<AllocAction>& alloc) const {
    const int J = num_servers(), K = num_users();
    if (static_cast<int>(actions.size()) != K) throw DomainError("step: need one user action per user");
    if (static_cast<int>(alloc.size()) != J) throw DomainError("step: need one allocation action per server");
    for (int k = 0; k < K; ++k) {
      const auto& a = actions[static_cast<std::size_t>(k)];
      if (a.server < 0 || a.server >= J) throw DomainError("step: user " + std::to_string(k) + " server out of range");
      const int L = (*catalog_)[static_cast<std::size_t>(requests_[static_cast<std::size_t>(k)].model)].layer_count();
      if (a.split < 0 || a.split > L) throw DomainError("step: user " + std::to_string(k) + " split out of range");
    }
    for (const auto& a : alloc) {
      if (static_cast<int>(a.comp.size()) != K || static_cast<int>(a.band.size()) != K) {
        throw DomainError("step: allocation weights must have K entries");
      }
      for (std::size_t k = 0; k < a.comp.size(); ++k) {
        if (!(a.comp[k] >= 0.0) || !(a.band[k] >= 0.0) || !std::isfinite(a.comp[k]) || !std::isfinite(a.band[k])) {
          throw DomainError("step: allocation weights must be finite and non-negative");
        }
      }
    }
  }

  /// Renormalized split of `capacity` over `members`. The last member gets
  /// the remainder so the shares sum to the capacity without exceeding it.
  static void split_capacity(const std::vector<int>& members, const std::vector<double>& weights, double capacity,
                             std::vector<double>& out) {
    if (members.empty()) return;
    double total = 0.0;
    for (int k : members) total += weights[static_cast<std::size_t>(k)];
    if (!(total > 0.0)) return;  // nothing granted; users see zero-rate links
    double running = 0.0;
    for (std::size_t n = 0; n + 1 < members.size(); ++n) {
      const auto k = static_cast<std::size_t>(members[n]);
      out[k] = capacity * (weights[k] / total);
      running += out[k];
    }
    const auto last = static_cast<std::size_t>(members.back());
    out[last] = std::max(0.0, capacity - running);
    for (;;) {
      double sum = 0.0;
      for (int k : members) sum += out[static_cast<std::size_t>(k)];
      if (sum <= capacity) break;
      auto& biggest = *std::max_element(out.begin(), out.end());
      biggest = std::nextafter(biggest, 0.0);
    }
  }

  SystemConfig cfg_;
  std::shared_ptr<const Catalog> catalog_;
  std::vector<std::int64_t> model_bytes_;
  int max_layers_ = 0;

  std::vector<ServerState> servers_;
  std::vector<UserState> users_;
  std::vector<std::vector<double>> gain_;
  Rng request_rng_;

  DeploymentMatrix x_;
  DeploymentMatrix x_prev_;
  int slot_ = 0;
  bool deployed_this_slot_ = false;
  bool slot_open_ = false;
  std::vector<Request> requests_;

  std::vector<double> pending_migration_;
  std::vector<int> interval_hits_;
  std::vector<double> current_r_, window_r_;
  std::vector<std::vector<double>> current_h_, window_h_, cumulative_h_;
  std::vector<std::vector<int>> last_access_;
};

}  // namespace edgesplit
