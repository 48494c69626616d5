#pragma once

#include <cmath>

#include <Eigen/QR>

#include "edgesplit/nn/autodiff.hpp"
#include "edgesplit/rng.hpp"

namespace edgesplit::nn {

/// Orthogonal matrix scaled by `gain`: orthonormal columns when rows >= cols,
/// orthonormal rows otherwise. Deterministic given the generator state.
inline Matrix orthogonal_init(Index rows, Index cols, double gain, Rng& rng) {
  const Index big = std::max(rows, cols);
  const Index small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Index r = 0; r < big; ++r) {
    for (Index c = 0; c < small; ++c) a(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Index c = 0; c < small; ++c) {
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  }
  Matrix out(rows, cols);
  if (rows >= cols) {
    out = q * gain;
  } else {
    out = q.transpose() * gain;
  }
  return out;
}

}  // namespace edgesplit::nn
