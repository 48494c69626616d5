#pragma once

// Actor and critic networks of the three agent layers. One network per
// layer is shared by all agents of that layer.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "edgesplit/config.hpp"
#include "edgesplit/nn/autodiff.hpp"
#include "edgesplit/nn/layers.hpp"

namespace edgesplit::marl {

using nn::Index;
using nn::Matrix;
using nn::Tape;
using nn::Var;

inline constexpr double kHeadGain = 0.01;

struct NetDims {
  int models = 0;      // I
  int servers = 0;     // J
  int users = 0;       // K
  int max_layers = 0;  // max_i L_i

  int vec_x() const { return models * servers; }
};

/// Running mean/variance of critic targets; critics regress the standardized
/// target and values are mapped back before use.
struct ValueNorm {
  double mean = 0.0;
  double var = 1.0;
  double count = 1e-4;

  void update(const std::vector<double>& xs) {
    if (xs.empty()) return;
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size());
    const double n = static_cast<double>(xs.size());
    const double total = count + n;
    const double delta = m - mean;
    mean += delta * n / total;
    var = (var * count + v * n + delta * delta * count * n / total) / total;
    count = total;
  }
  double stdev() const { return std::sqrt(std::max(var, 1e-8)); }
  double normalize(double x) const { return (x - mean) / stdev(); }
  double denormalize(double x) const { return x * stdev() + mean; }
};

// ---------------------------------------------------------------------------
// User layer
// ---------------------------------------------------------------------------

/// Shared trunk over [embed(model), encode(batch), vec(X)] with a server head
/// and a split head.
class UserActor {
 public:
  UserActor() = default;
  UserActor(nn::ParamStore& store, const NetDims& d, const TrainerConfig& c, Rng& rng)
      : dims_(d),
        model_emb_(store, "user.model_emb", d.models, c.model_embed, rng),
        batch_enc_(store, "user.batch_enc", c.input_embed, rng),
        l1_(store, "user.l1", c.model_embed + c.input_embed + d.vec_x(), c.user_hidden, nn::kHiddenGain, rng),
        l2_(store, "user.l2", c.user_hidden, c.user_hidden, nn::kHiddenGain, rng),
        server_head_(store, "user.server_head", c.user_hidden, d.servers, kHeadGain, rng),
        split_head_(store, "user.split_head", c.user_hidden, d.max_layers + 1, kHeadGain, rng) {}

  struct Logits {
    Var server;
    Var split;
  };

  /// models: one id per row; batch: n x 1 features; vec_x: n x IJ.
  Logits forward(Tape& t, const std::vector<int>& models, const Matrix& batch, const Matrix& vec_x) const {
    Var x = nn::concat_cols({model_emb_(t, models), batch_enc_(t, t.constant(batch)), t.constant(vec_x)});
    Var h = nn::tanh(l2_(t, nn::tanh(l1_(t, x))));
    return {server_head_(t, h), split_head_(t, h)};
  }

 private:
  NetDims dims_;
  nn::Embedding model_emb_;
  nn::ScalarEncoder batch_enc_;
  nn::Linear l1_, l2_, server_head_, split_head_;
};

/// Split mask row: partition points 0..L_i allowed, deeper ones masked.
inline void split_mask_row(Matrix& mask, Index row, int layer_count) {
  for (Index c = 0; c < mask.cols(); ++c) mask(row, c) = c <= layer_count ? 1.0 : 0.0;
}

inline nn::Mlp make_critic(nn::ParamStore& store, const std::string& name, int in, int hidden, Rng& rng) {
  return nn::Mlp(store, name, {in, hidden, hidden, 1}, 1.0, rng);
}

// ---------------------------------------------------------------------------
// Deployment layer
// ---------------------------------------------------------------------------

/// Auto-regressive deployment policy: a GRU reads [r, h_j, x_st] after every
/// selection; a masked head picks the next model. The critic reads the GRU
/// state (plus vec(X) of the deployment being replaced when centralized).
class DeployNet {
 public:
  DeployNet() = default;
  DeployNet(nn::ParamStore& store, const NetDims& d, const TrainerConfig& c, bool centralized, Rng& rng)
      : dims_(d),
        centralized_(centralized),
        gru_(store, "deploy.gru", 3 * d.models, c.deploy_hidden, rng),
        head_(store, "deploy.head", c.deploy_hidden, d.models, kHeadGain, rng),
        critic_(make_critic(store, "deploy.critic", c.deploy_hidden + (centralized ? d.vec_x() : 0), c.critic_hidden, rng)) {}

  Var step(Tape& t, const Matrix& obs, Var h) const { return gru_(t, t.constant(obs), h); }
  Var logits(Tape& t, Var h) const { return head_(t, h); }
  Var value(Tape& t, Var h, const Matrix& vec_x_prev) const {
    return centralized_ ? critic_(t, nn::concat_cols({h, t.constant(vec_x_prev)})) : critic_(t, h);
  }
  Index hidden() const { return gru_.hidden(); }
  bool centralized() const { return centralized_; }

 private:
  NetDims dims_;
  bool centralized_ = true;
  nn::GruCell gru_;
  nn::Linear head_;
  nn::Mlp critic_;
};

// ---------------------------------------------------------------------------
// Allocation layer
// ---------------------------------------------------------------------------

/// Dual-branch attention: a context MLP over o^alloc gives the computation and
/// bandwidth queries; per-user keys come from embedded (model, batch, split).
class AllocNet {
 public:
  AllocNet() = default;
  AllocNet(nn::ParamStore& store, const NetDims& d, const TrainerConfig& c, bool centralized, Rng& rng)
      : dims_(d),
        key_dim_(c.key_dim),
        centralized_(centralized),
        context_(store, "alloc.context", {3 * d.users, c.alloc_hidden, 2 * c.key_dim}, 1.0, rng),
        model_emb_(store, "alloc.model_emb", d.models, c.model_embed, rng),
        batch_enc_(store, "alloc.batch_enc", c.input_embed, rng),
        key1_(store, "alloc.key1", c.model_embed + c.input_embed + 1, c.alloc_hidden, nn::kHiddenGain, rng),
        key2_(store, "alloc.key2", c.alloc_hidden, 2 * c.key_dim, 1.0, rng),
        log_std_(&store.add("alloc.log_std", Matrix::Constant(1, 2, c.alloc_log_std_init))),
        critic_(make_critic(store, "alloc.critic", 3 * d.users + (centralized ? d.servers : 0), c.critic_hidden, rng)) {}

  struct Scores {
    Var comp;  // R x K
    Var band;  // R x K
  };

  /// obs: R x 3K. Per-user features are row-major over (record, user):
  /// models and batch/split columns have R*K rows.
  Scores scores(Tape& t, const Matrix& obs, const std::vector<int>& models, const Matrix& batch,
                const Matrix& split) const {
    const Index R = obs.rows(), K = dims_.users;
    Var q = context_(t, t.constant(obs));
    Var feat = nn::concat_cols({model_emb_(t, models), batch_enc_(t, t.constant(batch)), t.constant(split)});
    Var keys = key2_(t, nn::tanh(key1_(t, feat)));
    std::vector<int> owner(static_cast<std::size_t>(R * K));
    for (Index n = 0; n < R * K; ++n) owner[static_cast<std::size_t>(n)] = static_cast<int>(n / K);
    const double inv = 1.0 / std::sqrt(static_cast<double>(key_dim_));
    auto branch = [&](Index offset) {
      Var qb = nn::gather_rows(nn::slice_cols(q, offset, key_dim_), owner);
      Var kb = nn::slice_cols(keys, offset, key_dim_);
      return nn::scale(nn::reshape(nn::row_sum(nn::mul(qb, kb)), R, K), inv);
    };
    return {branch(0), branch(key_dim_)};
  }

  /// Log-stdev of the score perturbation, branch b in {0: comp, 1: band}.
  Var log_std(Tape& t, int b) const { return nn::slice_cols(t.param(*log_std_), b, 1); }
  double log_std_value(int b) const { return log_std_->value(0, b); }

  Var value(Tape& t, const Matrix& obs, const Matrix& server_onehot) const {
    return centralized_ ? critic_(t, nn::concat_cols({t.constant(obs), t.constant(server_onehot)}))
                        : critic_(t, t.constant(obs));
  }

  int key_dim() const { return key_dim_; }
  bool centralized() const { return centralized_; }

 private:
  NetDims dims_;
  int key_dim_ = 0;
  bool centralized_ = true;
  nn::Mlp context_;
  nn::Embedding model_emb_;
  nn::ScalarEncoder batch_enc_;
  nn::Linear key1_, key2_;
  nn::Parameter* log_std_ = nullptr;
  nn::Mlp critic_;
};

/// Row-wise diagonal-Gaussian log-density of `action` around `mean` over the
/// entries selected by `mask` (R x K), with one shared log-stdev.
inline Var gaussian_log_prob(Var mean, const Matrix& action, const Matrix& mask, Var log_std) {
  Tape& t = *mean.tape;
  const Index R = action.rows();
  const std::vector<int> zeros(static_cast<std::size_t>(R), 0);
  Var ls = nn::gather_rows(log_std, zeros);  // R x 1
  Var z = nn::mul_col(nn::sub(t.constant(action), mean), nn::exp(nn::scale(ls, -1.0)));
  Var quad = nn::row_sum(nn::mul(nn::square(z), t.constant(mask)));
  const Matrix count = mask.rowwise().sum();
  Var norm = nn::mul_col(ls, t.constant(count));
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  return nn::sub(nn::scale(quad, -0.5), nn::add(norm, t.constant(count * half_log_2pi)));
}

/// Entropy of the same Gaussian per row: n_active * (log σ + ½ log 2πe).
inline Var gaussian_entropy(Var log_std, const Matrix& mask) {
  Tape& t = *log_std.tape;
  const Index R = mask.rows();
  const std::vector<int> zeros(static_cast<std::size_t>(R), 0);
  const Matrix count = mask.rowwise().sum();
  Var ls = nn::gather_rows(log_std, zeros);
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return nn::add(nn::mul_col(ls, t.constant(count)), t.constant(count * c));
}

}  // namespace edgesplit::marl
