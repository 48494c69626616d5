#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>
#include <sstream>

#include "edgesplit/config.hpp"
#include "edgesplit/env.hpp"

using namespace edgesplit;

namespace {

SystemConfig small_config() {
  SystemConfig s;
  s.num_servers = 3;
  s.num_users = 8;
  s.episode_slots = 20;
  s.deploy_interval = 5;
  s.families = {"lenet7", "resnet18", "vgg16"};
  s.services_per_model = 2;
  return s;
}

Environment make_env(const SystemConfig& s) {
  return Environment(s, std::make_shared<const Catalog>(build_catalog(s)));
}

/// Deploys every model that fits, in id order, on every server.
std::vector<std::vector<int>> fill_macros(const Environment& env) {
  std::vector<std::vector<int>> macros(static_cast<std::size_t>(env.num_servers()));
  for (int j = 0; j < env.num_servers(); ++j) {
    double left = env.servers()[static_cast<std::size_t>(j)].storage_bytes;
    for (int i = 0; i < env.num_models(); ++i) {
      const double b = static_cast<double>(env.model_bytes()[static_cast<std::size_t>(i)]);
      if (b <= left) {
        macros[static_cast<std::size_t>(j)].push_back(i);
        left -= b;
      }
    }
  }
  return macros;
}

}  // namespace

TEST(Zipf, ClosedForm) {
  const auto p = zipf_probabilities(0.8, 3);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::pow(2.0, -0.8) + std::pow(3.0, -0.8)), 1e-12);
  EXPECT_NEAR(p[0], 0.5026, 1e-4);
  for (double v : zipf_probabilities(0.0, 5)) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Zipf, EmpiricalRatioAndChiSquare) {
  Rng rng(17);
  const int I = 6;
  std::vector<double> counts(I, 0.0);
  const int n = 1'000'000;
  const int per_call = 50;
  for (int c = 0; c < n / per_call; ++c) {
    for (const auto& r : sample_requests(rng, 0.8, I, per_call)) counts[static_cast<std::size_t>(r.model)] += 1.0;
  }
  EXPECT_NEAR(counts[0] / counts[1], std::pow(2.0, 0.8), 0.02 * std::pow(2.0, 0.8));
  const auto p = zipf_probabilities(0.8, I);
  double chi2 = 0.0;
  for (int i = 0; i < I; ++i) {
    const double e = n * p[static_cast<std::size_t>(i)];
    chi2 += (counts[static_cast<std::size_t>(i)] - e) * (counts[static_cast<std::size_t>(i)] - e) / e;
  }
  EXPECT_LT(chi2, 15.086);  // chi-square 0.99 quantile, 5 degrees of freedom
}

TEST(Requests, BatchRange) {
  Rng rng(1);
  for (const auto& r : sample_requests(rng, 0.8, 4, 1000, 1, 4)) {
    EXPECT_GE(r.batch, 1);
    EXPECT_LE(r.batch, 4);
  }
}

TEST(Rewards, UserReward) {
  CostWeights w;
  UserOutcome o;
  o.hit = true;
  o.privacy = 2;
  o.energy = 3;
  o.delay.total_s = 2.5;
  EXPECT_DOUBLE_EQ(user_reward(o, w), -25.0);
  o.delay.total_s = 3.5;
  EXPECT_DOUBLE_EQ(user_reward(o, w), -30.0);
  o.hit = false;
  EXPECT_DOUBLE_EQ(user_reward(o, w), -50.0);
}

TEST(Rewards, AllocReward) {
  const std::vector<double> d{2.0, 4.0};
  EXPECT_DOUBLE_EQ(alloc_reward(d), -3.0);
  EXPECT_EQ(alloc_reward(std::vector<double>{}), 0.0);
  const std::vector<double> f{15.0};
  EXPECT_DOUBLE_EQ(alloc_reward(f), -15.0);
}

TEST(Rewards, HitCountAndMigration) {
  DeploymentMatrix x(2, 1);
  x.set(1, 0, true);
  std::vector<SlotServiceRecord> interval(2, SlotServiceRecord{{0, 0}, {1, 1}, x});
  EXPECT_EQ(hit_count(interval, 0), 4);

  DeploymentMatrix old(2, 1);
  const std::vector<std::int64_t> bytes{2'000'000'000, 1};
  DeploymentMatrix fresh(2, 1);
  fresh.set(0, 0, true);
  EXPECT_DOUBLE_EQ(migration_cost(fresh, old, 0, bytes, 400e6), 40.0);
  EXPECT_EQ(migration_cost(fresh, fresh, 0, bytes, 400e6), 0.0);
}

TEST(Environment, ResetIsDeterministic) {
  auto s = small_config();
  auto a = make_env(s), b = make_env(s);
  a.reset(42);
  b.reset(42);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(a.servers()[static_cast<std::size_t>(j)].flops, b.servers()[static_cast<std::size_t>(j)].flops);
    for (int k = 0; k < 8; ++k) EXPECT_EQ(a.gain(j, k), b.gain(j, k));
  }
  for (int k = 0; k < 8; ++k) {
    EXPECT_EQ(a.users()[static_cast<std::size_t>(k)].pos.x, b.users()[static_cast<std::size_t>(k)].pos.x);
  }
}

TEST(Environment, GridPlacement) {
  auto s = small_config();
  s.num_servers = 4;
  auto env = make_env(s);
  env.reset(1);
  std::vector<std::pair<double, double>> got;
  for (const auto& srv : env.servers()) got.emplace_back(srv.pos.x, srv.pos.y);
  std::sort(got.begin(), got.end());
  const std::vector<std::pair<double, double>> want{{250, 250}, {250, 750}, {750, 250}, {750, 750}};
  EXPECT_EQ(got, want);
}

TEST(Environment, UsersInsideArea) {
  auto s = small_config();
  s.num_users = 50;
  auto env = make_env(s);
  env.reset(3);
  for (const auto& u : env.users()) {
    EXPECT_GE(u.pos.x, 0.0);
    EXPECT_LE(u.pos.x, 1000.0);
    EXPECT_GE(u.pos.y, 0.0);
    EXPECT_LE(u.pos.y, 1000.0);
  }
}

TEST(Environment, CatalogMismatchRejected) {
  auto s = small_config();
  auto other = s;
  other.services_per_model = 1;
  EXPECT_THROW(Environment(s, std::make_shared<const Catalog>(build_catalog(other))), ConfigError);
}

TEST(Environment, StorageOverflowIsAnError) {
  auto s = small_config();
  s.server_storage_bytes = {3e9, 3e9};
  auto env = make_env(s);
  env.reset(0);
  // two VGG16-size models (~0.55 GB each) fit; fabricate an overflow with every model
  std::vector<std::vector<int>> macros(3);
  for (int i = 0; i < env.num_models(); ++i) macros[0].push_back(i);
  double total = 0.0;
  for (auto b : env.model_bytes()) total += static_cast<double>(b);
  if (total > 3e9) {
    EXPECT_THROW(env.deployment_phase(macros), StorageOverflowError);
  }
  auto tiny = s;
  tiny.server_storage_bytes = {1.0, 1.0};
  auto env2 = make_env(tiny);
  env2.reset(0);
  EXPECT_THROW(env2.deployment_phase({{0}, {}, {}}), StorageOverflowError);
}

TEST(Environment, EmptyMacroAndConstancy) {
  auto s = small_config();
  auto env = make_env(s);
  env.reset(5);
  env.deployment_phase({{}, {}, {}});
  for (int i = 0; i < env.num_models(); ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_FALSE(env.deployment()(i, j));
  }
  env.reset(5);
  env.deployment_phase(fill_macros(env));
  const auto x = env.deployment();
  for (int t = 0; t < s.deploy_interval; ++t) {
    const auto& reqs = env.begin_slot();
    std::vector<UserAction> acts;
    for (const auto& r : reqs) acts.push_back({env.strongest_server(r.user), 0});
    env.step(acts, env.equal_share(acts));
    if (t + 1 < s.deploy_interval) {
      EXPECT_EQ(env.deployment(), x);
      EXPECT_FALSE(env.deployment_due());
    }
  }
  EXPECT_TRUE(env.deployment_due());
}

TEST(Environment, MissGivesFailureDelay) {
  auto s = small_config();
  auto env = make_env(s);
  env.reset(9);
  env.deployment_phase({{}, {}, {}});
  const auto& reqs = env.begin_slot();
  std::vector<UserAction> acts;
  for (std::size_t k = 0; k < reqs.size(); ++k) acts.push_back({0, 0});
  const auto out = env.step(acts, env.equal_share(acts));
  for (const auto& u : out.users) {
    EXPECT_FALSE(u.hit);
    EXPECT_EQ(u.delay.total_s, s.weights.tau_fail);
    EXPECT_EQ(u.cost, s.weights.tau_fail);
    EXPECT_EQ(u.reward, s.weights.r_fail);
  }
  EXPECT_DOUBLE_EQ(out.mean_delay(), s.weights.tau_fail);
}

TEST(Environment, EqualWeightsSplitExactly) {
  auto s = small_config();
  s.num_users = 2;
  auto env = make_env(s);
  env.reset(2);
  env.deployment_phase(fill_macros(env));
  env.begin_slot();
  const std::vector<UserAction> acts{{1, 0}, {1, 0}};
  const auto out = env.step(acts, env.equal_share(acts));
  const auto& srv = env.servers()[1];
  EXPECT_EQ(out.f_alloc[1][0], srv.flops / 2);
  EXPECT_EQ(out.f_alloc[1][1], srv.flops / 2);
  EXPECT_EQ(out.b_alloc[1][0], srv.bandwidth_hz / 2);
  EXPECT_EQ(out.b_alloc[1][1], srv.bandwidth_hz / 2);
}

TEST(Environment, OutcomeMatchesIndependentRecomputation) {
  auto s = small_config();
  auto env = make_env(s);
  env.reset(11);
  env.deployment_phase(fill_macros(env));
  Rng rng(4);
  const auto reqs = env.begin_slot();
  std::vector<UserAction> acts;
  for (const auto& r : reqs) {
    acts.push_back({rng.uniform_int(0, 2), rng.uniform_int(0, env.catalog()[static_cast<std::size_t>(r.model)].layer_count())});
  }
  const auto out = env.step(acts, env.equal_share(acts));
  double acc = 0.0;
  for (std::size_t k = 0; k < reqs.size(); ++k) {
    const auto& u = out.users[k];
    const auto& srv = env.servers()[static_cast<std::size_t>(u.server)];
    const auto& usr = env.users()[k];
    const auto& prof = env.catalog()[static_cast<std::size_t>(u.model)];
    if (u.hit) {
      const auto sum = partition_summary(prof, u.split);
      const double band = out.b_alloc[static_cast<std::size_t>(u.server)][k];
      const double noise = noise_power(band, s.channel);
      const double g = env.gain(u.server, static_cast<int>(k));
      const double down = band * std::log2(1.0 + srv.tx_power_w * g / noise);
      const double up = band * std::log2(1.0 + usr.tx_power_w * g / noise);
      double expect = 8.0 * static_cast<double>(sum.download_bytes) / down +
                      u.batch * static_cast<double>(sum.local_flops) / usr.flops +
                      (sum.upload_bytes ? 8.0 * u.batch * static_cast<double>(sum.upload_bytes) / up : 0.0) +
                      u.batch * static_cast<double>(sum.edge_flops) / out.f_alloc[static_cast<std::size_t>(u.server)][k];
      EXPECT_NEAR(u.delay.total_s, expect, 1e-9 * std::max(1.0, expect));
    } else {
      EXPECT_EQ(u.delay.total_s, s.weights.tau_fail);
    }
    acc += u.delay.total_s;
  }
  EXPECT_NEAR(out.mean_delay(), acc / static_cast<double>(reqs.size()), 1e-12);
}

TEST(Environment, DeterministicReplay) {
  auto s = small_config();
  auto run = [&] {
    auto env = make_env(s);
    env.reset(21);
    Rng rng(8);
    std::ostringstream trace;
    while (!env.done()) {
      if (env.deployment_due()) env.deployment_phase(fill_macros(env));
      const auto reqs = env.begin_slot();
      std::vector<UserAction> acts;
      for (const auto& r : reqs) {
        acts.push_back({rng.uniform_int(0, 2), rng.uniform_int(0, env.catalog()[static_cast<std::size_t>(r.model)].layer_count())});
      }
      env.step(acts, env.equal_share(acts), &trace);
    }
    return trace.str();
  };
  EXPECT_EQ(run(), run());
}

TEST(Environment, DeployRewardAtIntervalEnd) {
  auto s = small_config();
  auto env = make_env(s);
  env.reset(13);
  env.deployment_phase(fill_macros(env));
  std::map<int, int> hits;
  for (int t = 0; t < s.deploy_interval; ++t) {
    const auto reqs = env.begin_slot();
    std::vector<UserAction> acts;
    for (const auto& r : reqs) acts.push_back({env.strongest_server(r.user), 0});
    const auto out = env.step(acts, env.equal_share(acts));
    for (const auto& u : out.users) {
      if (u.hit) ++hits[u.server];
    }
    if (t + 1 < s.deploy_interval) {
      EXPECT_FALSE(out.deploy_rewards.has_value());
    } else {
      ASSERT_TRUE(out.deploy_rewards.has_value());
      for (int j = 0; j < 3; ++j) {
        const double mig = migration_cost(env.deployment(), DeploymentMatrix(env.num_models(), 3), j, env.model_bytes(),
                                          env.servers()[static_cast<std::size_t>(j)].cloud_rate_bps);
        EXPECT_NEAR((*out.deploy_rewards)[static_cast<std::size_t>(j)], s.mu_hit * hits[j] - s.mu_mig * mig, 1e-9);
      }
    }
  }
}

TEST(Observations, Dimensions) {
  auto s = small_config();
  auto env = make_env(s);
  env.reset(1);
  const std::vector<double> xst(6, 0.0);
  EXPECT_EQ(env.deploy_local_obs(0, xst).size(), 18u);
  EXPECT_EQ(env.deploy_global_obs(0, xst).size(), 36u);
  env.deployment_phase(fill_macros(env));
  env.begin_slot();
  EXPECT_EQ(env.user_global_obs().size(), 16u + 18u);
  std::vector<UserAction> acts(8, UserAction{0, 0});
  acts[3].server = 1;
  const auto o = env.alloc_obs(1, acts);
  ASSERT_EQ(o.size(), 24u);
  for (int k = 0; k < 8; ++k) {
    if (k == 3) continue;
    EXPECT_EQ(o[static_cast<std::size_t>(k)], 0.0);
    EXPECT_EQ(o[static_cast<std::size_t>(8 + k)], 0.0);
    EXPECT_EQ(o[static_cast<std::size_t>(16 + k)], 0.0);
  }
  EXPECT_GT(o[3], 0.0);
}

TEST(Constraints, RandomActionSweep) {
  auto s = small_config();
  s.episode_slots = 100;
  auto env = make_env(s);
  Rng rng(99);
  int steps = 0;
  std::uint64_t episode = 0;
  while (steps < 10000) {
    env.reset(episode++);
    while (!env.done()) {
      if (env.deployment_due()) {
        std::vector<std::vector<int>> macros(3);
        for (int j = 0; j < 3; ++j) {
          double left = env.servers()[static_cast<std::size_t>(j)].storage_bytes;
          for (int i = 0; i < env.num_models(); ++i) {
            const double b = static_cast<double>(env.model_bytes()[static_cast<std::size_t>(i)]);
            if (rng.uniform01() < 0.5 && b <= left) {
              macros[static_cast<std::size_t>(j)].push_back(i);
              left -= b;
            }
          }
        }
        env.deployment_phase(macros);
        for (int j = 0; j < 3; ++j) {
          ASSERT_LE(env.storage_used(j, env.deployment()), env.servers()[static_cast<std::size_t>(j)].storage_bytes);
        }
      }
      const auto reqs = env.begin_slot();
      std::vector<UserAction> acts;
      std::vector<AllocAction> alloc(3);
      for (auto& a : alloc) {
        for (int k = 0; k < 8; ++k) {
          a.comp.push_back(rng.uniform01());
          a.band.push_back(rng.uniform01());
        }
      }
      for (const auto& r : reqs) {
        acts.push_back({rng.uniform_int(0, 2), rng.uniform_int(0, env.catalog()[static_cast<std::size_t>(r.model)].layer_count())});
      }
      const auto out = env.step(acts, alloc);
      for (int j = 0; j < 3; ++j) {
        double f = 0.0, b = 0.0;
        for (int k = 0; k < 8; ++k) {
          f += out.f_alloc[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
          b += out.b_alloc[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        }
        ASSERT_LE(f, env.servers()[static_cast<std::size_t>(j)].flops);
        ASSERT_LE(b, env.servers()[static_cast<std::size_t>(j)].bandwidth_hz);
      }
      int assoc = 0;
      for (const auto& members : out.associated) assoc += static_cast<int>(members.size());
      ASSERT_EQ(assoc, 8);
      ++steps;
    }
  }
}
