#pragma once

#include <cmath>
#include <vector>

#include "edgesplit/nn/autodiff.hpp"

namespace edgesplit::nn {

/// Global L2 norm of all gradients.
inline double grad_norm(ParamStore& store) {
  double sq = 0.0;
  for (auto* p : store.all()) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  const double norm = grad_norm(store);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto* p : store.all()) p->grad *= s;
  }
  return norm;
}

class Adam {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  explicit Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-5)
      : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : store.all()) {
      moments_.push_back({Matrix::Zero(p->value.rows(), p->value.cols()), Matrix::Zero(p->value.rows(), p->value.cols())});
    }
  }

  /// Gradient ascent is the caller's job: this minimizes.
  void step() {
    ++t_;
    if (lr_ == 0.0) return;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    auto params = store_->all();
    for (std::size_t n = 0; n < params.size(); ++n) {
      auto& p = *params[n];
      auto& mo = moments_[n];
      mo.m = beta1_ * mo.m + (1.0 - beta1_) * p.grad;
      mo.v = beta2_ * mo.v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr_ * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps_);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }
  const std::vector<Moments>& moments() const { return moments_; }
  std::vector<Moments>& moments() { return moments_; }
  void set_steps(long t) { t_ = t; }

 private:
  ParamStore* store_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace edgesplit::nn
