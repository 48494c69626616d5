#pragma once

// Numeric (tape-free) categorical sampling and attention weights.

#include <cmath>
#include <limits>
#include <vector>

#include "edgesplit/error.hpp"
#include "edgesplit/rng.hpp"

namespace edgesplit::nn {

/// Softmax over unmasked logits; masked categories have probability 0.
class MaskedCategorical {
 public:
  MaskedCategorical(std::vector<double> logits, std::vector<bool> mask)
      : logits_(std::move(logits)), mask_(std::move(mask)) {
    if (logits_.size() != mask_.size()) throw ShapeError("masked categorical: mask length differs from logits");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < logits_.size(); ++c) {
      if (mask_[c]) m = std::max(m, logits_[c]);
    }
    if (!std::isfinite(m)) throw DomainError("masked categorical: every category is masked");
    double z = 0.0;
    for (std::size_t c = 0; c < logits_.size(); ++c) {
      if (mask_[c]) z += std::exp(logits_[c] - m);
    }
    const double lse = m + std::log(z);
    logp_.assign(logits_.size(), -std::numeric_limits<double>::infinity());
    probs_.assign(logits_.size(), 0.0);
    for (std::size_t c = 0; c < logits_.size(); ++c) {
      if (!mask_[c]) continue;
      logp_[c] = logits_[c] - lse;
      probs_[c] = std::exp(logp_[c]);
    }
  }

  std::size_t size() const { return logits_.size(); }
  const std::vector<double>& probs() const { return probs_; }
  double log_prob(int c) const {
    if (c < 0 || static_cast<std::size_t>(c) >= logits_.size()) throw DomainError("log_prob: category out of range");
    return logp_[static_cast<std::size_t>(c)];
  }

  double entropy() const {
    double h = 0.0;
    for (std::size_t c = 0; c < probs_.size(); ++c) {
      if (probs_[c] > 0.0) h -= probs_[c] * logp_[c];
    }
    return h;
  }

  /// Inverse-CDF draw; the returned category is always unmasked.
  int sample(Rng& rng) const {
    const double u = rng.uniform01();
    double acc = 0.0;
    int last = -1;
    for (std::size_t c = 0; c < probs_.size(); ++c) {
      if (!mask_[c]) continue;
      last = static_cast<int>(c);
      acc += probs_[c];
      if (u < acc) return last;
    }
    return last;
  }

  /// Most probable unmasked category, ties to the lower index.
  int mode() const {
    int best = -1;
    for (std::size_t c = 0; c < probs_.size(); ++c) {
      if (mask_[c] && (best < 0 || logits_[c] > logits_[static_cast<std::size_t>(best)])) best = static_cast<int>(c);
    }
    return best;
  }

 private:
  std::vector<double> logits_;
  std::vector<bool> mask_;
  std::vector<double> logp_;
  std::vector<double> probs_;
};

struct CategoricalDraw {
  int index = 0;
  double log_prob = 0.0;
  double entropy = 0.0;
};

inline CategoricalDraw masked_sample(const MaskedCategorical& dist, Rng& rng) {
  const int c = dist.sample(rng);
  return {c, dist.log_prob(c), dist.entropy()};
}

/// softmax over active keys of <query, key> / sqrt(d_h); inactive keys get 0.
inline std::vector<double> softmax_active(const std::vector<double>& scores, const std::vector<bool>& active) {
  if (scores.size() != active.size()) throw ShapeError("softmax: mask length differs from scores");
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (active[n]) m = std::max(m, scores[n]);
  }
  if (!std::isfinite(m)) throw DomainError("attention: no active keys");
  std::vector<double> w(scores.size(), 0.0);
  double z = 0.0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (active[n]) z += (w[n] = std::exp(scores[n] - m));
  }
  for (auto& v : w) v /= z;
  return w;
}

inline std::vector<double> attention_weights(const std::vector<double>& query, const std::vector<std::vector<double>>& keys,
                                             double d_h, const std::vector<bool>& active) {
  if (!(d_h > 0.0)) throw DomainError("attention: d_h must be positive");
  std::vector<double> scores(keys.size(), 0.0);
  for (std::size_t n = 0; n < keys.size(); ++n) {
    if (keys[n].size() != query.size()) throw ShapeError("attention: key width differs from query");
    double s = 0.0;
    for (std::size_t c = 0; c < query.size(); ++c) s += query[c] * keys[n][c];
    scores[n] = s / std::sqrt(d_h);
  }
  return softmax_active(scores, active);
}

}  // namespace edgesplit::nn
