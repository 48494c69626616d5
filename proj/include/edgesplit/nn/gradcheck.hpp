#pragma once

#include <cmath>
#include <functional>

#include "edgesplit/nn/autodiff.hpp"

namespace edgesplit::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool ok = true;
};

/// Compares analytic gradients of `loss(tape)` against central differences for
/// every entry of every parameter in `store`. An entry passes when its error is
/// below `abs_floor` or below `rel_tol` relative to the larger magnitude.
inline GradCheckResult check_gradients(ParamStore& store, const std::function<Var(Tape&)>& loss, double rel_tol = 1e-4,
                                       double abs_floor = 1e-6, double step = 1e-6) {
  store.zero_grad();
  {
    Tape t;
    t.backward(loss(t));
  }
  GradCheckResult res;
  for (auto* p : store.all()) {
    for (Index n = 0; n < p->value.size(); ++n) {
      double& x = p->value.data()[n];
      const double keep = x;
      x = keep + step;
      double up, down;
      {
        Tape t;
        up = loss(t).scalar();
      }
      x = keep - step;
      {
        Tape t;
        down = loss(t).scalar();
      }
      x = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[n];
      const double err = std::abs(numeric - analytic);
      const double rel = err / std::max({std::abs(numeric), std::abs(analytic), 1e-12});
      res.max_abs_error = std::max(res.max_abs_error, err);
      if (err > abs_floor) {
        res.max_rel_error = std::max(res.max_rel_error, rel);
        if (rel > rel_tol) res.ok = false;
      }
    }
  }
  return res;
}

}  // namespace edgesplit::nn
