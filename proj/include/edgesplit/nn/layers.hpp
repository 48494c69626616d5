#pragma once

// Building blocks used by the agent networks. Every block registers its
// parameters in a ParamStore under a name prefix and reads them back onto a
// tape at forward time.

#include <string>
#include <vector>

#include "edgesplit/nn/autodiff.hpp"
#include "edgesplit/nn/init.hpp"

namespace edgesplit::nn {

inline constexpr double kHiddenGain = 1.4142135623730951;  // sqrt(2)

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out, double gain, Rng& rng)
      : w_(&store.add(name + ".w", orthogonal_init(in, out, gain, rng))),
        b_(&store.add(name + ".b", Matrix::Zero(1, out))) {}

  Var operator()(Tape& t, Var x) const { return add_row(matmul(x, t.param(*w_)), t.param(*b_)); }

  Index in() const { return w_->value.rows(); }
  Index out() const { return w_->value.cols(); }
  Parameter& weight() const { return *w_; }
  Parameter& bias() const { return *b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

/// Affine layers with Tanh between them; the last layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<Index>& widths, double head_gain, Rng& rng) {
    if (widths.size() < 2) throw ShapeError("mlp: need at least input and output widths");
    for (std::size_t n = 0; n + 1 < widths.size(); ++n) {
      const bool head = n + 2 == widths.size();
      layers_.emplace_back(store, name + "." + std::to_string(n), widths[n], widths[n + 1],
                           head ? head_gain : kHiddenGain, rng);
    }
  }

  Var operator()(Tape& t, Var x) const {
    if (x.cols() != layers_.front().in()) throw ShapeError("mlp: input width mismatch");
    for (std::size_t n = 0; n < layers_.size(); ++n) {
      x = layers_[n](t, x);
      if (n + 1 < layers_.size()) x = tanh(x);
    }
    return x;
  }

  /// Hidden features only (all layers but the head, each followed by Tanh).
  Var trunk(Tape& t, Var x) const {
    for (std::size_t n = 0; n + 1 < layers_.size(); ++n) x = tanh(layers_[n](t, x));
    return x;
  }

  Index in() const { return layers_.front().in(); }
  Index out() const { return layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
};

/// Gated recurrent unit:
///   z = σ(x Wz + h Uz + bz),  r = σ(x Wr + h Ur + br)
///   n = tanh(x Wn + (r ⊙ h) Un + bn),  h' = (1 - z) ⊙ n + z ⊙ h
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParamStore& store, const std::string& name, Index in, Index hidden, Rng& rng) {
    for (const char* g : {"z", "r", "n"}) {
      gates_.push_back({&store.add(name + ".W" + g, orthogonal_init(in, hidden, 1.0, rng)),
                        &store.add(name + ".U" + g, orthogonal_init(hidden, hidden, 1.0, rng)),
                        &store.add(name + ".b" + g, Matrix::Zero(1, hidden))});
    }
  }

  Var operator()(Tape& t, Var x, Var h) const {
    if (x.cols() != gates_[0].w->value.rows()) throw ShapeError("gru: input width mismatch");
    if (h.cols() != gates_[0].u->value.rows() || h.rows() != x.rows()) throw ShapeError("gru: hidden shape mismatch");
    const auto affine = [&](const Gate& g, Var xin, Var hin) {
      return add_row(add(matmul(xin, t.param(*g.w)), matmul(hin, t.param(*g.u))), t.param(*g.b));
    };
    Var z = sigmoid(affine(gates_[0], x, h));
    Var r = sigmoid(affine(gates_[1], x, h));
    Var n = tanh(affine(gates_[2], x, mul(r, h)));
    // (1 - z) ⊙ n + z ⊙ h  ==  n + z ⊙ (h - n)
    return add(n, mul(z, sub(h, n)));
  }

  Index hidden() const { return gates_[0].u->value.rows(); }

 private:
  struct Gate {
    Parameter* w;
    Parameter* u;
    Parameter* b;
  };
  std::vector<Gate> gates_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore& store, const std::string& name, Index count, Index width, Rng& rng) {
    Matrix init(count, width);
    for (Index r = 0; r < count; ++r) {
      for (Index c = 0; c < width; ++c) init(r, c) = rng.normal();
    }
    table_ = &store.add(name + ".table", std::move(init));
  }

  Var operator()(Tape& t, const std::vector<int>& ids) const { return gather_rows(t.param(*table_), ids); }
  Index width() const { return table_->value.cols(); }
  Index count() const { return table_->value.rows(); }

 private:
  Parameter* table_ = nullptr;
};

/// Scalar feature -> width, linear + Tanh.
class ScalarEncoder {
 public:
  ScalarEncoder() = default;
  ScalarEncoder(ParamStore& store, const std::string& name, Index width, Rng& rng)
      : lin_(store, name, 1, width, 1.0, rng) {}
  Var operator()(Tape& t, Var x) const { return tanh(lin_(t, x)); }
  Index width() const { return lin_.out(); }

 private:
  Linear lin_;
};

}  // namespace edgesplit::nn
