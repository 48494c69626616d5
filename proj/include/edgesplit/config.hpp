#pragma once

// SystemConfig (simulator) and TrainerConfig (learning hyper-parameters),
// with a JSON file format. Every key is optional; missing keys keep the
// defaults below. Unknown keys are rejected so typos surface as config errors.
//
//   {
//     "system":  { "num_servers": 10, "num_users": 50, "user_flops": [1e10, 1e11], ... },
//     "trainer": { "iterations": 1000, "lr": 3e-4, ... }
//   }

#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesplit/catalog_io.hpp"
#include "edgesplit/cost_models.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/model_profiles.hpp"
#include "edgesplit/radio.hpp"

namespace edgesplit {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct SystemConfig {
  int num_servers = 10;   // J
  int num_users = 50;     // K
  int episode_slots = 200;  // T
  int deploy_interval = 10;  // ΔT, slots
  double area_m = 1000.0;

  // Catalog: either a file or the synthetic generator.
  std::string catalog_path;
  std::vector<std::string> families{"lenet7",   "lenet9",   "lenet12", "resnet18", "resnet34",
                                    "resnet50", "vgg13",    "vgg16",   "vgg19"};
  int services_per_model = 5;
  std::uint64_t catalog_seed = 7;

  Range user_flops{10e9, 100e9};
  Range server_flops{500e9, 2000e9};
  Range server_bandwidth_hz{50e6, 100e6};
  Range server_storage_bytes{3e9, 5e9};
  Range user_storage_bytes{1e9, 2e9};  // recorded; device storage never binds
  Range cloud_rate_bps{200e6, 500e6};
  Range privacy_pref{0.2, 0.8};
  Range energy_per_flop{1e-11, 1e-9};
  int batch_min = 1;
  int batch_max = 4;
  double zipf_s = 0.8;

  ChannelParams channel;
  CostWeights weights;
  double mu_hit = 1.0;
  double mu_mig = 0.1;

  int num_models() const {
    return catalog_path.empty() ? static_cast<int>(families.size()) * services_per_model : -1;
  }

  void validate() const {
    if (num_servers < 1) throw ConfigError("num_servers must be >= 1");
    if (num_users < 1) throw ConfigError("num_users must be >= 1");
    if (episode_slots < 1) throw ConfigError("episode_slots must be >= 1");
    if (deploy_interval < 1) throw ConfigError("deploy_interval must be >= 1");
    if (episode_slots % deploy_interval != 0) throw ConfigError("deploy_interval must divide episode_slots");
    if (!(area_m > 0.0)) throw ConfigError("area_m must be positive");
    if (catalog_path.empty()) {
      if (families.empty()) throw ConfigError("families must not be empty");
      for (const auto& f : families) (void)family_from_name(f);
      if (services_per_model < 1) throw ConfigError("services_per_model must be >= 1");
    }
    auto check = [](const Range& r, const char* name, bool positive) {
      if (r.lo > r.hi) throw ConfigError(std::string(name) + ": empty range");
      if (positive && !(r.lo > 0.0)) throw ConfigError(std::string(name) + ": must be positive");
    };
    check(user_flops, "user_flops", true);
    check(server_flops, "server_flops", true);
    check(server_bandwidth_hz, "server_bandwidth_hz", true);
    check(server_storage_bytes, "server_storage_bytes", false);
    check(user_storage_bytes, "user_storage_bytes", false);
    check(cloud_rate_bps, "cloud_rate_bps", true);
    check(privacy_pref, "privacy_pref", false);
    check(energy_per_flop, "energy_per_flop", false);
    if (privacy_pref.lo < 0.0 || privacy_pref.hi > 1.0) throw ConfigError("privacy_pref must lie in [0,1]");
    if (batch_min < 1 || batch_max < batch_min) throw ConfigError("batch range must satisfy 1 <= min <= max");
    if (zipf_s < 0.0) throw ConfigError("zipf_s must be >= 0");
    if (mu_hit < 0.0 || mu_mig < 0.0) throw ConfigError("mu_hit / mu_mig must be >= 0");
    channel.validate();
    weights.validate();
  }
};

struct TrainerConfig {
  int iterations = 1000;
  int num_envs = 4;  // N parallel episodes per iteration
  int workers = 1;   // rollout threads
  double lr = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double entropy_user = 0.05;
  double entropy_deploy = 0.25;
  double entropy_alloc = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int ppo_epochs = 4;
  int minibatches = 4;

  double lambda_init = 0.01;
  double lambda_lr = 0.01;
  double lambda_max = 100.0;
  double j_bar = -1.0;  // per-step delay threshold; < 0 means "use tau_bar"

  int user_hidden = 256;
  int critic_hidden = 256;
  int deploy_hidden = 256;
  int alloc_hidden = 128;
  int model_embed = 8;  // d_m
  int input_embed = 8;  // d_s
  int key_dim = 32;     // d_h
  double alloc_log_std_init = -0.5;

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (num_envs < 1) throw ConfigError("num_envs must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0,1]");
    if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be positive");
    if (ppo_epochs < 1 || minibatches < 1) throw ConfigError("ppo_epochs and minibatches must be >= 1");
    if (lambda_init < 0.0 || lambda_init > lambda_max) throw ConfigError("lambda_init outside [0, lambda_max]");
    if (lambda_lr < 0.0) throw ConfigError("lambda_lr must be >= 0");
    if (user_hidden < 1 || critic_hidden < 1 || deploy_hidden < 1 || alloc_hidden < 1 || model_embed < 1 ||
        input_embed < 1 || key_dim < 1) {
      throw ConfigError("network widths must be >= 1");
    }
  }
};

struct ExperimentConfig {
  SystemConfig system;
  TrainerConfig trainer;

  void validate() const {
    system.validate();
    trainer.validate();
  }
};

namespace detail {

/// Reads optional keys from a JSON object and rejects anything unread.
class KeyReader {
 public:
  KeyReader(const nlohmann::json& obj, std::string scope) : obj_(obj), scope_(std::move(scope)) {
    if (!obj_.is_object()) throw ConfigError(scope_ + ": expected an object");
  }

  template <typename T>
  void opt(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(scope_ + "." + key + ": " + e.what());
    }
  }

  void opt(const char* key, Range& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(scope_ + "." + key + ": expected [lo, hi]");
    }
    out = Range{v[0].get<double>(), v[1].get<double>()};
  }

  void nested(const char* key, const std::function<void(KeyReader&)>& fn) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    KeyReader inner(obj_.at(key), scope_ + "." + key);
    fn(inner);
    inner.finish();
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(scope_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string scope_;
  std::set<std::string> seen_;
};

inline nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

}  // namespace detail

inline void read_system(detail::KeyReader& r, SystemConfig& s) {
  r.opt("num_servers", s.num_servers);
  r.opt("num_users", s.num_users);
  r.opt("episode_slots", s.episode_slots);
  r.opt("deploy_interval", s.deploy_interval);
  r.opt("area_m", s.area_m);
  r.opt("catalog_path", s.catalog_path);
  r.opt("families", s.families);
  r.opt("services_per_model", s.services_per_model);
  r.opt("catalog_seed", s.catalog_seed);
  r.opt("user_flops", s.user_flops);
  r.opt("server_flops", s.server_flops);
  r.opt("server_bandwidth_hz", s.server_bandwidth_hz);
  r.opt("server_storage_bytes", s.server_storage_bytes);
  r.opt("user_storage_bytes", s.user_storage_bytes);
  r.opt("cloud_rate_bps", s.cloud_rate_bps);
  r.opt("privacy_pref", s.privacy_pref);
  r.opt("energy_per_flop", s.energy_per_flop);
  r.opt("batch_min", s.batch_min);
  r.opt("batch_max", s.batch_max);
  r.opt("zipf_s", s.zipf_s);
  r.opt("mu_hit", s.mu_hit);
  r.opt("mu_mig", s.mu_mig);
  r.nested("channel", [&](detail::KeyReader& c) {
    c.opt("pathloss_exponent", s.channel.pathloss_exponent);
    c.opt("ref_loss_db", s.channel.ref_loss_db);
    c.opt("shadow_sigma_db", s.channel.shadow_sigma_db);
    c.opt("noise_figure_db", s.channel.noise_figure_db);
    c.opt("carrier_ghz", s.channel.carrier_ghz);
    Range server{s.channel.server_tx_power_dbm_lo, s.channel.server_tx_power_dbm_hi};
    Range user{s.channel.user_tx_power_dbm_lo, s.channel.user_tx_power_dbm_hi};
    c.opt("server_tx_power_dbm", server);
    c.opt("user_tx_power_dbm", user);
    s.channel.server_tx_power_dbm_lo = server.lo;
    s.channel.server_tx_power_dbm_hi = server.hi;
    s.channel.user_tx_power_dbm_lo = user.lo;
    s.channel.user_tx_power_dbm_hi = user.hi;
  });
  r.nested("weights", [&](detail::KeyReader& w) {
    w.opt("mu1", s.weights.mu1);
    w.opt("mu2", s.weights.mu2);
    w.opt("mu3", s.weights.mu3);
    w.opt("alpha1", s.weights.alpha1);
    w.opt("alpha2", s.weights.alpha2);
    w.opt("tau_bar", s.weights.tau_bar);
    w.opt("tau_fail", s.weights.tau_fail);
    w.opt("r_fail", s.weights.r_fail);
  });
}

inline void read_trainer(detail::KeyReader& r, TrainerConfig& t) {
  r.opt("iterations", t.iterations);
  r.opt("num_envs", t.num_envs);
  r.opt("workers", t.workers);
  r.opt("lr", t.lr);
  r.opt("gamma", t.gamma);
  r.opt("gae_lambda", t.gae_lambda);
  r.opt("clip_eps", t.clip_eps);
  r.opt("entropy_user", t.entropy_user);
  r.opt("entropy_deploy", t.entropy_deploy);
  r.opt("entropy_alloc", t.entropy_alloc);
  r.opt("value_coef", t.value_coef);
  r.opt("max_grad_norm", t.max_grad_norm);
  r.opt("ppo_epochs", t.ppo_epochs);
  r.opt("minibatches", t.minibatches);
  r.opt("lambda_init", t.lambda_init);
  r.opt("lambda_lr", t.lambda_lr);
  r.opt("lambda_max", t.lambda_max);
  r.opt("j_bar", t.j_bar);
  r.opt("user_hidden", t.user_hidden);
  r.opt("critic_hidden", t.critic_hidden);
  r.opt("deploy_hidden", t.deploy_hidden);
  r.opt("alloc_hidden", t.alloc_hidden);
  r.opt("model_embed", t.model_embed);
  r.opt("input_embed", t.input_embed);
  r.opt("key_dim", t.key_dim);
  r.opt("alloc_log_std_init", t.alloc_log_std_init);
}

inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
  ExperimentConfig cfg;
  detail::KeyReader root(doc, "config");
  root.nested("system", [&](detail::KeyReader& r) { read_system(r, cfg.system); });
  root.nested("trainer", [&](detail::KeyReader& r) { read_trainer(r, cfg.trainer); });
  root.finish();
  cfg.validate();
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.system;
  const auto& t = cfg.trainer;
  nlohmann::json system = {
      {"num_servers", s.num_servers},
      {"num_users", s.num_users},
      {"episode_slots", s.episode_slots},
      {"deploy_interval", s.deploy_interval},
      {"area_m", s.area_m},
      {"catalog_path", s.catalog_path},
      {"families", s.families},
      {"services_per_model", s.services_per_model},
      {"catalog_seed", s.catalog_seed},
      {"user_flops", detail::range_json(s.user_flops)},
      {"server_flops", detail::range_json(s.server_flops)},
      {"server_bandwidth_hz", detail::range_json(s.server_bandwidth_hz)},
      {"server_storage_bytes", detail::range_json(s.server_storage_bytes)},
      {"user_storage_bytes", detail::range_json(s.user_storage_bytes)},
      {"cloud_rate_bps", detail::range_json(s.cloud_rate_bps)},
      {"privacy_pref", detail::range_json(s.privacy_pref)},
      {"energy_per_flop", detail::range_json(s.energy_per_flop)},
      {"batch_min", s.batch_min},
      {"batch_max", s.batch_max},
      {"zipf_s", s.zipf_s},
      {"mu_hit", s.mu_hit},
      {"mu_mig", s.mu_mig},
      {"channel",
       {{"pathloss_exponent", s.channel.pathloss_exponent},
        {"ref_loss_db", s.channel.ref_loss_db},
        {"shadow_sigma_db", s.channel.shadow_sigma_db},
        {"noise_figure_db", s.channel.noise_figure_db},
        {"carrier_ghz", s.channel.carrier_ghz},
        {"server_tx_power_dbm", {s.channel.server_tx_power_dbm_lo, s.channel.server_tx_power_dbm_hi}},
        {"user_tx_power_dbm", {s.channel.user_tx_power_dbm_lo, s.channel.user_tx_power_dbm_hi}}}},
      {"weights",
       {{"mu1", s.weights.mu1},
        {"mu2", s.weights.mu2},
        {"mu3", s.weights.mu3},
        {"alpha1", s.weights.alpha1},
        {"alpha2", s.weights.alpha2},
        {"tau_bar", s.weights.tau_bar},
        {"tau_fail", s.weights.tau_fail},
        {"r_fail", s.weights.r_fail}}}};
  nlohmann::json trainer = {{"iterations", t.iterations},
                            {"num_envs", t.num_envs},
                            {"workers", t.workers},
                            {"lr", t.lr},
                            {"gamma", t.gamma},
                            {"gae_lambda", t.gae_lambda},
                            {"clip_eps", t.clip_eps},
                            {"entropy_user", t.entropy_user},
                            {"entropy_deploy", t.entropy_deploy},
                            {"entropy_alloc", t.entropy_alloc},
                            {"value_coef", t.value_coef},
                            {"max_grad_norm", t.max_grad_norm},
                            {"ppo_epochs", t.ppo_epochs},
                            {"minibatches", t.minibatches},
                            {"lambda_init", t.lambda_init},
                            {"lambda_lr", t.lambda_lr},
                            {"lambda_max", t.lambda_max},
                            {"j_bar", t.j_bar},
                            {"user_hidden", t.user_hidden},
                            {"critic_hidden", t.critic_hidden},
                            {"deploy_hidden", t.deploy_hidden},
                            {"alloc_hidden", t.alloc_hidden},
                            {"model_embed", t.model_embed},
                            {"input_embed", t.input_embed},
                            {"key_dim", t.key_dim},
                            {"alloc_log_std_init", t.alloc_log_std_init}};
  return {{"system", system}, {"trainer", trainer}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return config_from_json(doc);
}

/// Catalog described by the system config. Checks I against the file when
/// a catalog path is given.
inline Catalog build_catalog(const SystemConfig& s) {
  if (!s.catalog_path.empty()) return load_catalog(s.catalog_path);
  std::vector<ModelFamily> fams;
  for (const auto& f : s.families) fams.push_back(family_from_name(f));
  return synth_catalog(fams, s.services_per_model, s.catalog_seed);
}

}  // namespace edgesplit
