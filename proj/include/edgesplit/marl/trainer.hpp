#pragma once

// Hierarchical constrained multi-agent PPO with a Lagrangian delay constraint.
// Deployment agents act every ΔT slots, user and allocation agents every slot.
// One network (and optimizer) per agent layer is shared by its agents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <ostream>
#include <thread>
#include <vector>

#include "edgesplit/baselines.hpp"
#include "edgesplit/config.hpp"
#include "edgesplit/env.hpp"
#include "edgesplit/marl/deploy.hpp"
#include "edgesplit/marl/gae.hpp"
#include "edgesplit/marl/lagrange.hpp"
#include "edgesplit/marl/networks.hpp"
#include "edgesplit/marl/policies.hpp"
#include "edgesplit/marl/ppo.hpp"
#include "edgesplit/nn/checkpoint.hpp"
#include "edgesplit/nn/optim.hpp"

namespace edgesplit::marl {

/// splitmix64 finalizer; combines seeds into independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct IterationMetrics {
  int iteration = 0;
  double deploy_reward = 0.0;  // mean per deployment decision
  double user_reward = 0.0;    // mean per user-slot
  double alloc_reward = 0.0;   // mean per active server-slot
  double mean_delay = 0.0;
  double mean_energy = 0.0;
  double mean_privacy = 0.0;
  double system_cost = 0.0;  // μ1·privacy + μ2·energy per user-slot
  double success_hit = 0.0;
  double success_deadline = 0.0;
  double j_hat = 0.0;
  double lambda = 0.0;       // multiplier used by this iteration's update
  double lambda_next = 0.0;  // after the dual step
};

struct EvalMetrics {
  int episodes = 0;
  double mean_delay = 0.0;
  double mean_energy = 0.0;
  double mean_privacy = 0.0;
  double system_cost = 0.0;  // μ1·privacy + μ2·energy per user-slot
  double reward_cost = 0.0;  // negative mean user reward under the evaluation weights
  double success_hit = 0.0;
  double success_deadline = 0.0;
  std::vector<double> per_user_cost;  // system cost per user index
};

class Trainer {
 public:
  Trainer(ExperimentConfig cfg, AlgorithmSpec spec, std::shared_ptr<const Catalog> catalog, std::uint64_t seed)
      : cfg_(std::move(cfg)), spec_(std::move(spec)), catalog_(std::move(catalog)), seed_(seed) {
    cfg_.validate();
    validate_spec(spec_);
    train_system_ = cfg_.system;
    if (spec_.zero_delay_penalty) train_system_.weights.mu3 = 0.0;
    Environment probe(cfg_.system, catalog_);
    dims_ = {probe.num_models(), probe.num_servers(), probe.num_users(), probe.max_layers()};
    const auto& tc = cfg_.trainer;
    lagrange_.lambda = spec_.lagrangian() ? tc.lambda_init : 0.0;
    lagrange_.alpha = tc.lambda_lr;
    lagrange_.hi = tc.lambda_max;
    lagrange_.j_bar = tc.j_bar >= 0.0 ? tc.j_bar : cfg_.system.weights.tau_bar;

    Rng init(mix_seed(seed_, 0x1A17));
    const bool central = spec_.critic == CriticScope::centralized;
    if (spec_.learns_users()) {
      user_actor_ = UserActor(user_store_, dims_, tc, init);
      user_critic_ = make_critic(user_critic_store_, "user.reward_critic", user_critic_width(), tc.critic_hidden, init);
      cost_critic_ = make_critic(cost_critic_store_, "user.cost_critic", user_critic_width(), tc.critic_hidden, init);
    }
    if (spec_.learns_deploy()) deploy_net_ = DeployNet(deploy_store_, dims_, tc, central, init);
    if (spec_.learns_alloc()) alloc_net_ = AllocNet(alloc_store_, dims_, tc, central, init);
    opt_user_ = std::make_unique<nn::Adam>(user_store_, tc.lr);
    opt_user_critic_ = std::make_unique<nn::Adam>(user_critic_store_, tc.lr);
    opt_cost_critic_ = std::make_unique<nn::Adam>(cost_critic_store_, tc.lr);
    opt_deploy_ = std::make_unique<nn::Adam>(deploy_store_, tc.lr);
    opt_alloc_ = std::make_unique<nn::Adam>(alloc_store_, tc.lr);
    shuffle_rng_ = Rng(mix_seed(seed_, 0x5EED));
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const AlgorithmSpec& spec() const { return spec_; }
  const ExperimentConfig& config() const { return cfg_; }
  const NetDims& dims() const { return dims_; }
  const LagrangeState& lagrange() const { return lagrange_; }
  void set_lagrange(const LagrangeState& s) { lagrange_ = s; }
  int iteration() const { return iteration_; }

  nn::ParamStore& user_store() { return user_store_; }
  nn::ParamStore& user_critic_store() { return user_critic_store_; }
  nn::ParamStore& cost_critic_store() { return cost_critic_store_; }
  nn::ParamStore& deploy_store() { return deploy_store_; }
  nn::ParamStore& alloc_store() { return alloc_store_; }
  const UserActor& user_actor() const { return user_actor_; }
  const DeployNet& deploy_net() const { return deploy_net_; }
  const AllocNet& alloc_net() const { return alloc_net_; }

  // -------------------------------------------------------------------------
  // Rollout records
  // -------------------------------------------------------------------------

  struct UserSlot {
    std::vector<double> vec_x;
    std::vector<double> global;
    std::vector<int> models, batches, layer_counts;
    std::vector<UserAction> actions;
    std::vector<double> log_probs, rewards, costs, energy, privacy;
    std::vector<bool> hit, deadline_met;
  };

  struct AllocRecord {
    AllocInput input;
    std::vector<double> action_comp, action_band;
    double log_prob = 0.0;
    double reward = 0.0;
  };

  struct EnvRollout {
    std::vector<UserSlot> slots;
    std::vector<std::vector<AllocRecord>> alloc;  // [slot][server]
    std::vector<DeployRecord> deploy;             // interval-major, server-minor
  };

  /// Runs one episode on a fresh environment. rng == nullptr selects mode
  /// actions and noise-free allocation.
  EnvRollout collect(std::uint64_t env_seed, Rng* rng, const SystemConfig& system, std::ostream* trace = nullptr) const {
    Environment env(system, catalog_);
    env.reset(env_seed);
    EnvRollout ro;
    std::vector<std::size_t> open_deploy;
    const int J = env.num_servers(), K = env.num_users(), I = env.num_models();
    while (!env.done()) {
      if (env.deployment_due()) {
        std::vector<std::vector<int>> macros;
        if (spec_.learns_deploy()) {
          const auto vec_prev = env.deployment().vec();
          open_deploy.clear();
          for (int j = 0; j < J; ++j) {
            auto full = env.deploy_local_obs(j, std::vector<double>(static_cast<std::size_t>(I), 0.0));
            full.resize(static_cast<std::size_t>(2 * I));
            const double storage = env.servers()[static_cast<std::size_t>(j)].storage_bytes;
            auto sample = sample_deploy_macro(deploy_net_, full, storage, env.model_bytes(), rng);
            DeployRecord rec;
            rec.server = j;
            rec.base_obs = std::move(full);
            rec.vec_x_prev = vec_prev;
            rec.models = sample.models;
            rec.masks = std::move(sample.masks);
            rec.log_prob = sample.log_prob;
            macros.push_back(std::move(sample.models));
            open_deploy.push_back(ro.deploy.size());
            ro.deploy.push_back(std::move(rec));
          }
        } else {
          macros = heuristic_macros(env, spec_.deployment);
        }
        env.deployment_phase(macros);
      }
      const auto& reqs = env.begin_slot();
      UserSlot slot;
      slot.vec_x = env.deployment().vec();
      slot.global = env.user_global_obs();
      for (const auto& r : reqs) {
        slot.models.push_back(r.model);
        slot.batches.push_back(r.batch);
        slot.layer_counts.push_back(env.catalog()[static_cast<std::size_t>(r.model)].layer_count());
      }
      if (spec_.learns_users()) {
        for (const auto& d : user_policy_act(user_actor_, env, rng)) {
          slot.actions.push_back(d.action);
          slot.log_probs.push_back(d.log_prob);
        }
      } else {
        slot.actions = heuristic_user_actions(env, spec_);
        slot.log_probs.assign(static_cast<std::size_t>(K), 0.0);
      }
      std::vector<AllocAction> alloc;
      std::vector<AllocRecord> alloc_recs;
      if (spec_.learns_alloc()) {
        std::vector<AllocInput> inputs;
        for (int j = 0; j < J; ++j) inputs.push_back(alloc_input(env, j, slot.actions));
        std::vector<const AllocInput*> ptrs;
        for (const auto& in : inputs) ptrs.push_back(&in);
        const auto draws = alloc_policy_act(alloc_net_, ptrs, rng, rng != nullptr);
        for (int j = 0; j < J; ++j) {
          const auto& d = draws[static_cast<std::size_t>(j)];
          alloc.push_back({d.comp, d.band});
          alloc_recs.push_back({std::move(inputs[static_cast<std::size_t>(j)]), d.action_comp, d.action_band, d.log_prob, 0.0});
        }
      } else {
        alloc = env.equal_share(slot.actions);
      }
      const auto out = env.step(slot.actions, alloc, trace);
      for (const auto& u : out.users) {
        slot.rewards.push_back(u.reward);
        slot.costs.push_back(u.cost);
        slot.energy.push_back(u.energy);
        slot.privacy.push_back(u.privacy);
        slot.hit.push_back(u.hit);
        slot.deadline_met.push_back(u.deadline_met);
      }
      for (std::size_t j = 0; j < alloc_recs.size(); ++j) alloc_recs[j].reward = out.alloc_rewards[j];
      if (out.deploy_rewards && spec_.learns_deploy()) {
        for (std::size_t n = 0; n < open_deploy.size(); ++n) {
          ro.deploy[open_deploy[n]].reward = (*out.deploy_rewards)[n];
        }
      }
      ro.slots.push_back(std::move(slot));
      ro.alloc.push_back(std::move(alloc_recs));
    }
    return ro;
  }

  // -------------------------------------------------------------------------
  // One training iteration
  // -------------------------------------------------------------------------

  IterationMetrics train_iteration() {
    const auto& tc = cfg_.trainer;
    const int N = tc.num_envs;
    std::vector<EnvRollout> rollouts(static_cast<std::size_t>(N));
    auto run_env = [&](int e) {
      const std::uint64_t base = mix_seed(mix_seed(seed_, static_cast<std::uint64_t>(iteration_) + 1),
                                          static_cast<std::uint64_t>(e));
      Rng rng(mix_seed(base, 0xAC7));
      rollouts[static_cast<std::size_t>(e)] = collect(base, &rng, train_system_);
    };
    if (tc.workers > 1 && N > 1) {
      for (int start = 0; start < N; start += tc.workers) {
        std::vector<std::thread> pool;
        for (int e = start; e < std::min(N, start + tc.workers); ++e) pool.emplace_back(run_env, e);
        for (auto& th : pool) th.join();
      }
    } else {
      for (int e = 0; e < N; ++e) run_env(e);
    }

    IterationMetrics m = summarize(rollouts);
    m.iteration = iteration_;
    m.lambda = lagrange_.lambda;

    if (spec_.learns_users()) update_users(rollouts);
    if (spec_.learns_alloc()) update_alloc(rollouts);
    if (spec_.learns_deploy()) update_deploy(rollouts);

    if (spec_.lagrangian()) lagrange_ = lagrangian_dual_update(lagrange_, m.j_hat);
    m.lambda_next = lagrange_.lambda;
    ++iteration_;
    return m;
  }

  // -------------------------------------------------------------------------
  // Evaluation
  // -------------------------------------------------------------------------

  /// Greedy-mode evaluation on `episodes` fresh episodes derived from `seed`.
  /// Costs use the configured (not the training) weights.
  EvalMetrics evaluate(int episodes, std::uint64_t seed, std::ostream* trace = nullptr) const {
    if (episodes < 1) throw DomainError("evaluate: need at least one episode");
    EvalMetrics ev;
    ev.episodes = episodes;
    const auto& w = cfg_.system.weights;
    const auto K = static_cast<std::size_t>(dims_.users);
    ev.per_user_cost.assign(K, 0.0);
    double n = 0.0, delay = 0.0, e = 0.0, p = 0.0, rc = 0.0, hit = 0.0, ok = 0.0;
    double slots = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
      const auto ro = collect(mix_seed(seed, static_cast<std::uint64_t>(ep)), nullptr, cfg_.system, trace);
      for (const auto& s : ro.slots) {
        slots += 1.0;
        for (std::size_t k = 0; k < K; ++k) {
          n += 1.0;
          delay += s.costs[k];
          e += s.energy[k];
          p += s.privacy[k];
          rc -= s.rewards[k];
          hit += s.hit[k] ? 1.0 : 0.0;
          ok += s.deadline_met[k] ? 1.0 : 0.0;
          ev.per_user_cost[k] += w.mu1 * s.privacy[k] + w.mu2 * s.energy[k];
        }
      }
    }
    ev.mean_delay = delay / n;
    ev.mean_energy = e / n;
    ev.mean_privacy = p / n;
    ev.system_cost = w.mu1 * ev.mean_privacy + w.mu2 * ev.mean_energy;
    ev.reward_cost = rc / n;
    ev.success_hit = hit / n;
    ev.success_deadline = ok / n;
    for (auto& c : ev.per_user_cost) c /= slots;
    return ev;
  }

  // -------------------------------------------------------------------------
  // Checkpoints
  // -------------------------------------------------------------------------

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint c;
    c.stores["user"] = nn::params_to_json(user_store_);
    c.stores["user_critic"] = nn::params_to_json(user_critic_store_);
    c.stores["cost_critic"] = nn::params_to_json(cost_critic_store_);
    c.stores["deploy"] = nn::params_to_json(deploy_store_);
    c.stores["alloc"] = nn::params_to_json(alloc_store_);
    c.rng["shuffle"] = shuffle_rng_.state();
    c.extra["algorithm"] = spec_.name;
    c.extra["iteration"] = iteration_;
    c.extra["lagrange"] = {{"lambda", lagrange_.lambda}, {"alpha", lagrange_.alpha}, {"lo", lagrange_.lo},
                           {"hi", lagrange_.hi}, {"j_bar", lagrange_.j_bar}};
    c.extra["optimizers"] = {{"user", nn::optimizer_to_json(*opt_user_)},
                             {"user_critic", nn::optimizer_to_json(*opt_user_critic_)},
                             {"cost_critic", nn::optimizer_to_json(*opt_cost_critic_)},
                             {"deploy", nn::optimizer_to_json(*opt_deploy_)},
                             {"alloc", nn::optimizer_to_json(*opt_alloc_)}};
    nlohmann::json norms = nlohmann::json::object();
    for (const auto& [name, vn] : value_norms()) norms[name] = {vn->mean, vn->var, vn->count};
    c.extra["value_norms"] = norms;
    return c;
  }

  void restore(const nn::Checkpoint& c) {
    if (c.extra.value("algorithm", std::string()) != spec_.name) {
      throw ShapeError("checkpoint was written by '" + c.extra.value("algorithm", std::string()) + "', not '" +
                       spec_.name + "'");
    }
    nn::params_from_json(user_store_, c.stores.at("user"));
    nn::params_from_json(user_critic_store_, c.stores.at("user_critic"));
    nn::params_from_json(cost_critic_store_, c.stores.at("cost_critic"));
    nn::params_from_json(deploy_store_, c.stores.at("deploy"));
    nn::params_from_json(alloc_store_, c.stores.at("alloc"));
    shuffle_rng_.set_state(c.rng.at("shuffle"));
    iteration_ = c.extra.at("iteration").get<int>();
    const auto& l = c.extra.at("lagrange");
    lagrange_ = {l.at("lambda").get<double>(), l.at("alpha").get<double>(), l.at("lo").get<double>(),
                 l.at("hi").get<double>(), l.at("j_bar").get<double>()};
    const auto& opts = c.extra.at("optimizers");
    nn::optimizer_from_json(*opt_user_, opts.at("user"));
    nn::optimizer_from_json(*opt_user_critic_, opts.at("user_critic"));
    nn::optimizer_from_json(*opt_cost_critic_, opts.at("cost_critic"));
    nn::optimizer_from_json(*opt_deploy_, opts.at("deploy"));
    nn::optimizer_from_json(*opt_alloc_, opts.at("alloc"));
    const auto& norms = c.extra.at("value_norms");
    for (auto& [name, vn] : value_norms()) {
      const auto& v = norms.at(name);
      vn->mean = v[0].get<double>();
      vn->var = v[1].get<double>();
      vn->count = v[2].get<double>();
    }
  }

 private:
  std::vector<std::pair<std::string, ValueNorm*>> value_norms() const {
    auto* self = const_cast<Trainer*>(this);
    return {{"user", &self->norm_user_}, {"cost", &self->norm_cost_}, {"deploy", &self->norm_deploy_},
            {"alloc", &self->norm_alloc_}};
  }

  int user_critic_width() const {
    return spec_.critic == CriticScope::centralized ? 2 * dims_.users + dims_.vec_x() + dims_.users
                                                    : dims_.models + 1 + dims_.vec_x();
  }

  /// Critic input of user k in a slot: the global view plus the user's index
  /// (centralized), or the user's own request and vec(X) (local).
  void user_critic_row(const UserSlot& s, int k, Matrix& out, Index row) const {
    Index c = 0;
    if (spec_.critic == CriticScope::centralized) {
      for (double v : s.global) out(row, c++) = v;
      for (int n = 0; n < dims_.users; ++n) out(row, c++) = n == k ? 1.0 : 0.0;
    } else {
      const auto ku = static_cast<std::size_t>(k);
      for (int i = 0; i < dims_.models; ++i) out(row, c++) = i == s.models[ku] ? 1.0 : 0.0;
      out(row, c++) = static_cast<double>(s.batches[ku]) / cfg_.system.batch_max;
      for (double v : s.vec_x) out(row, c++) = v;
    }
  }

  IterationMetrics summarize(const std::vector<EnvRollout>& rollouts) const {
    IterationMetrics m;
    double n = 0.0, na = 0.0, nd = 0.0;
    const auto& w = cfg_.system.weights;
    for (const auto& ro : rollouts) {
      for (const auto& s : ro.slots) {
        for (std::size_t k = 0; k < s.costs.size(); ++k) {
          n += 1.0;
          m.user_reward += s.rewards[k];
          m.mean_delay += s.costs[k];
          m.mean_energy += s.energy[k];
          m.mean_privacy += s.privacy[k];
          m.success_hit += s.hit[k] ? 1.0 : 0.0;
          m.success_deadline += s.deadline_met[k] ? 1.0 : 0.0;
        }
      }
      for (const auto& slot : ro.alloc) {
        for (const auto& r : slot) {
          if (!r.input.active()) continue;
          na += 1.0;
          m.alloc_reward += r.reward;
        }
      }
      for (const auto& d : ro.deploy) {
        nd += 1.0;
        m.deploy_reward += d.reward;
      }
    }
    m.user_reward /= n;
    m.mean_delay /= n;
    m.mean_energy /= n;
    m.mean_privacy /= n;
    m.success_hit /= n;
    m.success_deadline /= n;
    m.system_cost = w.mu1 * m.mean_privacy + w.mu2 * m.mean_energy;
    if (na > 0) m.alloc_reward /= na;
    if (nd > 0) m.deploy_reward /= nd;
    m.j_hat = m.mean_delay;
    return m;
  }

  static Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
    return out;
  }

  static Matrix column_of(const std::vector<double>& v) { return nn::column(v); }

  std::vector<std::vector<int>> minibatches(int rows) {
    std::vector<int> perm(static_cast<std::size_t>(rows));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), shuffle_rng_.engine());
    const int m = std::max(1, std::min(cfg_.trainer.minibatches, rows));
    std::vector<std::vector<int>> out(static_cast<std::size_t>(m));
    for (int n = 0; n < rows; ++n) out[static_cast<std::size_t>(n % m)].push_back(perm[static_cast<std::size_t>(n)]);
    return out;
  }

  void optimizer_step(nn::ParamStore& store, nn::Adam& opt) {
    nn::clip_grad_norm(store, cfg_.trainer.max_grad_norm);
    opt.step();
  }

  /// Critic regression on standardized targets.
  void fit_critic(nn::ParamStore& store, nn::Adam& opt, const nn::Mlp& critic, const Matrix& inputs,
                  const Matrix& targets, const std::vector<int>& rows) {
    store.zero_grad();
    Tape t;
    Var v = critic(t, t.constant(take_rows(inputs, rows)));
    Var loss = nn::scale(nn::mean(nn::square(nn::sub(v, t.constant(take_rows(targets, rows))))), cfg_.trainer.value_coef);
    t.backward(loss);
    optimizer_step(store, opt);
  }

  std::vector<double> critic_values(const nn::Mlp& critic, const Matrix& inputs, const ValueNorm& norm) const {
    Tape t;
    const Matrix v = critic(t, t.constant(inputs)).value();
    std::vector<double> out(static_cast<std::size_t>(v.rows()));
    for (Index r = 0; r < v.rows(); ++r) out[static_cast<std::size_t>(r)] = norm.denormalize(v(r, 0));
    return out;
  }

  // -- user layer -------------------------------------------------------------

  void update_users(const std::vector<EnvRollout>& rollouts) {
    const auto& tc = cfg_.trainer;
    const int K = dims_.users;
    const int T = static_cast<int>(rollouts.front().slots.size());
    const int E = static_cast<int>(rollouts.size());
    const int rows = E * T * K;
    const auto idx = [&](int e, int t, int k) { return (e * T + t) * K + k; };

    std::vector<int> models(static_cast<std::size_t>(rows)), servers(models), splits(models);
    Matrix batch(rows, 1), vec_x(rows, dims_.vec_x()), split_mask(rows, dims_.max_layers + 1);
    Matrix critic_in(rows, user_critic_width());
    std::vector<double> logp_old(static_cast<std::size_t>(rows)), rewards(logp_old), costs(logp_old);
    for (int e = 0; e < E; ++e) {
      for (int t = 0; t < T; ++t) {
        const auto& s = rollouts[static_cast<std::size_t>(e)].slots[static_cast<std::size_t>(t)];
        for (int k = 0; k < K; ++k) {
          const int r = idx(e, t, k);
          const auto ku = static_cast<std::size_t>(k), ru = static_cast<std::size_t>(r);
          models[ru] = s.models[ku];
          servers[ru] = s.actions[ku].server;
          splits[ru] = s.actions[ku].split;
          batch(r, 0) = static_cast<double>(s.batches[ku]) / cfg_.system.batch_max;
          for (std::size_t n = 0; n < s.vec_x.size(); ++n) vec_x(r, static_cast<Index>(n)) = s.vec_x[n];
          split_mask_row(split_mask, r, s.layer_counts[ku]);
          user_critic_row(s, k, critic_in, r);
          logp_old[ru] = s.log_probs[ku];
          rewards[ru] = s.rewards[ku];
          costs[ru] = s.costs[ku];
        }
      }
    }

    const auto v_r = critic_values(user_critic_, critic_in, norm_user_);
    const auto v_c = critic_values(cost_critic_, critic_in, norm_cost_);
    std::vector<double> adv_r(static_cast<std::size_t>(rows)), adv_c(adv_r), ret_r(adv_r), ret_c(adv_r);
    for (int e = 0; e < E; ++e) {
      for (int k = 0; k < K; ++k) {
        std::vector<double> rr, vr, cc, vc;
        for (int t = 0; t < T; ++t) {
          const auto ru = static_cast<std::size_t>(idx(e, t, k));
          rr.push_back(rewards[ru]);
          vr.push_back(v_r[ru]);
          cc.push_back(costs[ru]);
          vc.push_back(v_c[ru]);
        }
        const auto gr = gae(rr, vr, 0.0, tc.gamma, tc.gae_lambda);
        const auto gc = gae(cc, vc, 0.0, tc.gamma, tc.gae_lambda);
        for (int t = 0; t < T; ++t) {
          const auto ru = static_cast<std::size_t>(idx(e, t, k));
          const auto tu = static_cast<std::size_t>(t);
          adv_r[ru] = gr.advantages[tu];
          ret_r[ru] = gr.returns[tu];
          adv_c[ru] = gc.advantages[tu];
          ret_c[ru] = gc.returns[tu];
        }
      }
    }
    standardize(adv_r);
    const double lam = spec_.lagrangian() ? lagrange_.lambda : 0.0;
    std::vector<double> adv(static_cast<std::size_t>(rows));
    for (std::size_t r = 0; r < adv.size(); ++r) {
      adv[r] = spec_.lagrangian() ? (adv_r[r] - lam * adv_c[r]) / (1.0 + lam) : adv_r[r];
    }
    norm_user_.update(ret_r);
    norm_cost_.update(ret_c);
    Matrix tgt_r(rows, 1), tgt_c(rows, 1);
    for (int r = 0; r < rows; ++r) {
      tgt_r(r, 0) = norm_user_.normalize(ret_r[static_cast<std::size_t>(r)]);
      tgt_c(r, 0) = norm_cost_.normalize(ret_c[static_cast<std::size_t>(r)]);
    }
    const Matrix logp_old_m = column_of(logp_old), adv_m = column_of(adv);

    for (int epoch = 0; epoch < tc.ppo_epochs; ++epoch) {
      for (const auto& mb : minibatches(rows)) {
        std::vector<int> mb_models, mb_servers, mb_splits;
        for (int r : mb) {
          mb_models.push_back(models[static_cast<std::size_t>(r)]);
          mb_servers.push_back(servers[static_cast<std::size_t>(r)]);
          mb_splits.push_back(splits[static_cast<std::size_t>(r)]);
        }
        user_store_.zero_grad();
        {
          Tape t;
          const Matrix mask = take_rows(split_mask, mb);
          auto lg = user_actor_.forward(t, mb_models, take_rows(batch, mb), take_rows(vec_x, mb));
          const Matrix all = Matrix::Ones(static_cast<Index>(mb.size()), dims_.servers);
          Var logp = nn::add(nn::pick(nn::masked_log_softmax(lg.server, all), mb_servers),
                             nn::pick(nn::masked_log_softmax(lg.split, mask), mb_splits));
          Var ent = nn::add(nn::masked_entropy(lg.server, all), nn::masked_entropy(lg.split, mask));
          Var surr = ppo_clip_surrogate(logp, take_rows(logp_old_m, mb), take_rows(adv_m, mb), tc.clip_eps);
          Var loss = nn::scale(nn::add(surr, nn::scale(nn::mean(ent), tc.entropy_user)), -1.0);
          t.backward(loss);
        }
        optimizer_step(user_store_, *opt_user_);
        fit_critic(user_critic_store_, *opt_user_critic_, user_critic_, critic_in, tgt_r, mb);
        if (spec_.lagrangian()) fit_critic(cost_critic_store_, *opt_cost_critic_, cost_critic_, critic_in, tgt_c, mb);
      }
    }
  }

  // -- allocation layer -------------------------------------------------------

  void update_alloc(const std::vector<EnvRollout>& rollouts) {
    const auto& tc = cfg_.trainer;
    const int J = dims_.servers, K = dims_.users;
    const int T = static_cast<int>(rollouts.front().slots.size());
    const int E = static_cast<int>(rollouts.size());
    const int rows = E * T * J;
    const auto idx = [&](int e, int t, int j) { return (e * T + t) * J + j; };
    std::vector<const AllocRecord*> recs(static_cast<std::size_t>(rows));
    for (int e = 0; e < E; ++e) {
      for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
          recs[static_cast<std::size_t>(idx(e, t, j))] =
              &rollouts[static_cast<std::size_t>(e)].alloc[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
        }
      }
    }
    Matrix onehot = Matrix::Zero(rows, J);
    Matrix obs(rows, 3 * K);
    for (int r = 0; r < rows; ++r) {
      onehot(r, r % J) = 1.0;
      const auto& o = recs[static_cast<std::size_t>(r)]->input.obs;
      for (int c = 0; c < 3 * K; ++c) obs(r, c) = o[static_cast<std::size_t>(c)];
    }
    std::vector<double> values(static_cast<std::size_t>(rows));
    {
      Tape t;
      const Matrix v = alloc_net_.value(t, obs, onehot).value();
      for (int r = 0; r < rows; ++r) values[static_cast<std::size_t>(r)] = norm_alloc_.denormalize(v(r, 0));
    }
    std::vector<double> adv(static_cast<std::size_t>(rows)), ret(adv);
    for (int e = 0; e < E; ++e) {
      for (int j = 0; j < J; ++j) {
        std::vector<double> rr, vv;
        for (int t = 0; t < T; ++t) {
          rr.push_back(recs[static_cast<std::size_t>(idx(e, t, j))]->reward);
          vv.push_back(values[static_cast<std::size_t>(idx(e, t, j))]);
        }
        const auto g = gae(rr, vv, 0.0, tc.gamma, tc.gae_lambda);
        for (int t = 0; t < T; ++t) {
          adv[static_cast<std::size_t>(idx(e, t, j))] = g.advantages[static_cast<std::size_t>(t)];
          ret[static_cast<std::size_t>(idx(e, t, j))] = g.returns[static_cast<std::size_t>(t)];
        }
      }
    }
    norm_alloc_.update(ret);
    Matrix tgt(rows, 1);
    for (int r = 0; r < rows; ++r) tgt(r, 0) = norm_alloc_.normalize(ret[static_cast<std::size_t>(r)]);

    std::vector<int> active;
    std::vector<double> active_adv;
    for (int r = 0; r < rows; ++r) {
      if (recs[static_cast<std::size_t>(r)]->input.active()) {
        active.push_back(r);
        active_adv.push_back(adv[static_cast<std::size_t>(r)]);
      }
    }
    standardize(active_adv);

    for (int epoch = 0; epoch < tc.ppo_epochs; ++epoch) {
      // actor on active records
      if (!active.empty()) {
        for (const auto& mb : minibatches(static_cast<int>(active.size()))) {
          std::vector<const AllocInput*> ins;
          Matrix act_c(static_cast<Index>(mb.size()), K), act_b(act_c.rows(), K), old(act_c.rows(), 1),
              a(act_c.rows(), 1);
          for (std::size_t n = 0; n < mb.size(); ++n) {
            const auto* rec = recs[static_cast<std::size_t>(active[static_cast<std::size_t>(mb[n])])];
            ins.push_back(&rec->input);
            for (int k = 0; k < K; ++k) {
              act_c(static_cast<Index>(n), k) = rec->action_comp[static_cast<std::size_t>(k)];
              act_b(static_cast<Index>(n), k) = rec->action_band[static_cast<std::size_t>(k)];
            }
            old(static_cast<Index>(n), 0) = rec->log_prob;
            a(static_cast<Index>(n), 0) = active_adv[static_cast<std::size_t>(mb[n])];
          }
          const auto b = stack_alloc_inputs(ins);
          alloc_store_.zero_grad();
          Tape t;
          const auto s = alloc_net_.scores(t, b.obs, b.models, b.batch, b.split);
          Var logp = nn::add(gaussian_log_prob(s.comp, act_c, b.mask, alloc_net_.log_std(t, 0)),
                             gaussian_log_prob(s.band, act_b, b.mask, alloc_net_.log_std(t, 1)));
          Var ent = nn::add(gaussian_entropy(alloc_net_.log_std(t, 0), b.mask),
                            gaussian_entropy(alloc_net_.log_std(t, 1), b.mask));
          Var surr = ppo_clip_surrogate(logp, old, a, tc.clip_eps);
          Var loss = nn::scale(nn::add(surr, nn::scale(nn::mean(ent), tc.entropy_alloc)), -1.0);
          t.backward(loss);
          optimizer_step(alloc_store_, *opt_alloc_);
        }
      }
      // critic on every record
      for (const auto& mb : minibatches(rows)) {
        alloc_store_.zero_grad();
        Tape t;
        Var v = alloc_net_.value(t, take_rows(obs, mb), take_rows(onehot, mb));
        Var loss = nn::scale(nn::mean(nn::square(nn::sub(v, t.constant(take_rows(tgt, mb))))), tc.value_coef);
        t.backward(loss);
        optimizer_step(alloc_store_, *opt_alloc_);
      }
    }
  }

  // -- deployment layer -------------------------------------------------------

  void update_deploy(const std::vector<EnvRollout>& rollouts) {
    const auto& tc = cfg_.trainer;
    const int J = dims_.servers;
    std::vector<const DeployRecord*> recs;
    for (const auto& ro : rollouts) {
      for (const auto& d : ro.deploy) recs.push_back(&d);
    }
    if (recs.empty()) return;
    const int rows = static_cast<int>(recs.size());
    std::vector<double> values(static_cast<std::size_t>(rows));
    {
      Tape t;
      const Matrix v = replay_deploy(t, deploy_net_, recs, dims_.models).value.value();
      for (int r = 0; r < rows; ++r) values[static_cast<std::size_t>(r)] = norm_deploy_.denormalize(v(r, 0));
    }
    // records are interval-major, server-minor within each environment
    std::vector<double> adv(static_cast<std::size_t>(rows)), ret(adv);
    int offset = 0;
    for (const auto& ro : rollouts) {
      const int n = static_cast<int>(ro.deploy.size());
      const int intervals = n / J;
      for (int j = 0; j < J; ++j) {
        std::vector<double> rr, vv;
        for (int i = 0; i < intervals; ++i) {
          rr.push_back(recs[static_cast<std::size_t>(offset + i * J + j)]->reward);
          vv.push_back(values[static_cast<std::size_t>(offset + i * J + j)]);
        }
        const auto g = gae(rr, vv, 0.0, tc.gamma, tc.gae_lambda);
        for (int i = 0; i < intervals; ++i) {
          adv[static_cast<std::size_t>(offset + i * J + j)] = g.advantages[static_cast<std::size_t>(i)];
          ret[static_cast<std::size_t>(offset + i * J + j)] = g.returns[static_cast<std::size_t>(i)];
        }
      }
      offset += n;
    }
    standardize(adv);
    norm_deploy_.update(ret);
    std::vector<double> tgt(static_cast<std::size_t>(rows)), old(tgt);
    for (int r = 0; r < rows; ++r) {
      tgt[static_cast<std::size_t>(r)] = norm_deploy_.normalize(ret[static_cast<std::size_t>(r)]);
      old[static_cast<std::size_t>(r)] = recs[static_cast<std::size_t>(r)]->log_prob;
    }
    const Matrix tgt_m = column_of(tgt), old_m = column_of(old), adv_m = column_of(adv);
    for (int epoch = 0; epoch < tc.ppo_epochs; ++epoch) {
      for (const auto& mb : minibatches(rows)) {
        std::vector<const DeployRecord*> sub;
        for (int r : mb) sub.push_back(recs[static_cast<std::size_t>(r)]);
        deploy_store_.zero_grad();
        Tape t;
        const auto rp = replay_deploy(t, deploy_net_, sub, dims_.models);
        Var surr = ppo_clip_surrogate(rp.log_prob, take_rows(old_m, mb), take_rows(adv_m, mb), tc.clip_eps);
        Var vloss = nn::mean(nn::square(nn::sub(rp.value, t.constant(take_rows(tgt_m, mb)))));
        Var loss = nn::sub(nn::scale(vloss, tc.value_coef),
                           nn::add(surr, nn::scale(nn::mean(rp.entropy), tc.entropy_deploy)));
        t.backward(loss);
        optimizer_step(deploy_store_, *opt_deploy_);
      }
    }
  }

  ExperimentConfig cfg_;
  AlgorithmSpec spec_;
  std::shared_ptr<const Catalog> catalog_;
  std::uint64_t seed_;
  SystemConfig train_system_;
  NetDims dims_;
  LagrangeState lagrange_;
  int iteration_ = 0;

  nn::ParamStore user_store_, user_critic_store_, cost_critic_store_, deploy_store_, alloc_store_;
  UserActor user_actor_;
  nn::Mlp user_critic_, cost_critic_;
  DeployNet deploy_net_;
  AllocNet alloc_net_;
  std::unique_ptr<nn::Adam> opt_user_, opt_user_critic_, opt_cost_critic_, opt_deploy_, opt_alloc_;
  ValueNorm norm_user_, norm_cost_, norm_deploy_, norm_alloc_;
  Rng shuffle_rng_;
};

}  // namespace edgesplit::marl
