#pragma once

// Reverse-mode differentiation over a fixed operator set on row-major
// matrices (rows = batch). A Tape records one forward pass; backward()
// pushes d(loss)/d(node) back through it and accumulates parameter
// gradients into their Parameter::grad slots.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "edgesplit/error.hpp"

namespace edgesplit::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Named parameters with stable addresses and same-shaped gradient slots.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw DomainError("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Matrix::Zero(init.rows(), init.cols());
    p->value = std::move(init);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("no parameter '" + name + "'");
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("no parameter '" + name + "'");
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter*> all() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m) { return push(std::move(m), false, nullptr, {}); }

  Var param(Parameter& p) { return push(p.value, true, &p, {}); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }

  /// Gradient of the last backward() w.r.t. a node (zero if unreachable).
  Matrix grad(Var v) const {
    const auto& n = nodes_[v.id];
    return n.grad.size() ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols());
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  void backward(Var loss) {
    auto& root = nodes_[loss.id];
    if (root.value.rows() != 1 || root.value.cols() != 1) throw ShapeError("backward: loss must be a 1x1 scalar");
    root.grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.param) {
        n.param->grad += n.grad;
      } else if (n.back) {
        n.back(n.grad);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Internal: record a node whose backward closure receives d(loss)/d(node).
  Var push(Matrix value, bool needs_grad, Parameter* param, std::function<void(const Matrix&)> back) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, param, std::move(back)});
    return Var{this, nodes_.size() - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    auto& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(const Matrix&)> back;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

namespace detail {

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw DomainError("variables from different tapes");
  return *a.tape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), ng, nullptr, [&t, a, b](const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::same_shape(a, b, "add");
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(a.value() + b.value(), ng, nullptr, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::same_shape(a, b, "sub");
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(a.value() - b.value(), ng, nullptr, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// a (n x m) + row (1 x m) broadcast over rows.
inline Var add_row(Var a, Var row) {
  Tape& t = detail::tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bias must be 1 x cols");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const bool ng = t.needs_grad(a) || t.needs_grad(row);
  return t.push(std::move(out), ng, nullptr, [&t, a, row](const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::same_shape(a, b, "mul");
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(a.value().cwiseProduct(b.value()), ng, nullptr, [&t, a, b](const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

/// a (n x m) scaled row-wise by col (n x 1).
inline Var mul_col(Var a, Var col) {
  Tape& t = detail::tape_of(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("mul_col: need an n x 1 column");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  const bool ng = t.needs_grad(a) || t.needs_grad(col);
  return t.push(std::move(out), ng, nullptr, [&t, a, col](const Matrix& g) {
    if (t.needs_grad(a)) {
      Matrix ga = g.array().colwise() * t.value(col).col(0).array();
      t.accumulate(a, ga);
    }
    if (t.needs_grad(col)) t.accumulate(col, g.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.push(a.value() * s, t.needs_grad(a), nullptr, [&t, a, s](const Matrix& g) { t.accumulate(a, g * s); });
}

inline Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value().array() + s;
  return t.push(std::move(out), t.needs_grad(a), nullptr, [&t, a](const Matrix& g) { t.accumulate(a, g); });
}

// ---------------------------------------------------------------------------
// Elementwise non-linearities
// ---------------------------------------------------------------------------

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  // exp is vectorized by Eigen for doubles, std::tanh is not
  Matrix y = 1.0 - 2.0 / ((2.0 * a.value().array()).exp() + 1.0);
  Matrix dy = 1.0 - y.array().square();
  return t.push(std::move(y), t.needs_grad(a), nullptr,
                [&t, a, dy = std::move(dy)](const Matrix& g) { t.accumulate(a, g.cwiseProduct(dy)); });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix y = (1.0 + (-a.value().array()).exp()).inverse();
  Matrix dy = y.array() * (1.0 - y.array());
  return t.push(std::move(y), t.needs_grad(a), nullptr,
                [&t, a, dy = std::move(dy)](const Matrix& g) { t.accumulate(a, g.cwiseProduct(dy)); });
}

inline Var exp(Var a) {
  Tape& t = *a.tape;
  Matrix y = a.value().array().exp();
  return t.push(y, t.needs_grad(a), nullptr, [&t, a, y](const Matrix& g) { t.accumulate(a, g.cwiseProduct(y)); });
}

inline Var square(Var a) {
  Tape& t = *a.tape;
  return t.push(a.value().array().square(), t.needs_grad(a), nullptr,
                [&t, a](const Matrix& g) { t.accumulate(a, 2.0 * g.cwiseProduct(t.value(a))); });
}

/// Elementwise min; ties route the gradient to the first argument.
inline Var minimum(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  detail::same_shape(a, b, "minimum");
  Matrix pick_a = (a.value().array() <= b.value().array()).cast<double>();
  Matrix out = a.value().cwiseMin(b.value());
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), ng, nullptr, [&t, a, b, pick_a = std::move(pick_a)](const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(pick_a));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct((1.0 - pick_a.array()).matrix()));
  });
}

/// Clamp to [lo, hi]; zero gradient where the bound is active.
inline Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Matrix inside = ((a.value().array() > lo) && (a.value().array() < hi)).cast<double>();
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(out), t.needs_grad(a), nullptr,
                [&t, a, inside = std::move(inside)](const Matrix& g) { t.accumulate(a, g.cwiseProduct(inside)); });
}

/// Constant copy: no gradient flows through it.
inline Var detach(Var a) { return a.tape->constant(a.value()); }

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  Tape& t = *parts.front().tape;
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.tape != &t) throw DomainError("variables from different tapes");
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
    ng = ng || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(out), ng, nullptr, [&t, parts](const Matrix& g) {
    Index c0 = 0;
    for (const auto& p : parts) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

inline Var slice_cols(Var a, Index start, Index count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  const Index rows = a.rows(), cols = a.cols();
  return t.push(a.value().middleCols(start, count), t.needs_grad(a), nullptr,
                [&t, a, start, count, rows, cols](const Matrix& g) {
                  Matrix full = Matrix::Zero(rows, cols);
                  full.middleCols(start, count) = g;
                  t.accumulate(a, full);
                });
}

/// Row lookup (embedding): out.row(n) = table.row(indices[n]).
inline Var gather_rows(Var table, const std::vector<int>& indices) {
  Tape& t = *table.tape;
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    if (indices[n] < 0 || indices[n] >= table.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(n)) = table.value().row(indices[n]);
  }
  const Index rows = table.rows(), cols = table.cols();
  return t.push(std::move(out), t.needs_grad(table), nullptr, [&t, table, indices, rows, cols](const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    for (std::size_t n = 0; n < indices.size(); ++n) full.row(indices[n]) += g.row(static_cast<Index>(n));
    t.accumulate(table, full);
  });
}

/// Each row repeated `times` times consecutively.
inline Var repeat_rows(Var a, Index times) {
  Tape& t = *a.tape;
  const Index rows = a.rows(), cols = a.cols();
  Matrix out(rows * times, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index k = 0; k < times; ++k) out.row(r * times + k) = a.value().row(r);
  }
  return t.push(std::move(out), t.needs_grad(a), nullptr, [&t, a, rows, cols, times](const Matrix& g) {
    Matrix acc = Matrix::Zero(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index k = 0; k < times; ++k) acc.row(r) += g.row(r * times + k);
    }
    t.accumulate(a, acc);
  });
}

/// Row-major reshape.
inline Var reshape(Var a, Index rows, Index cols) {
  Tape& t = *a.tape;
  if (rows * cols != a.value().size()) throw ShapeError("reshape: element count differs");
  const Index r0 = a.rows(), c0 = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return t.push(std::move(out), t.needs_grad(a), nullptr, [&t, a, r0, c0](const Matrix& g) {
    Matrix back = Eigen::Map<const Matrix>(g.data(), r0, c0);
    t.accumulate(a, back);
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var row_sum(Var a) {
  Tape& t = *a.tape;
  const Index cols = a.cols();
  return t.push(a.value().rowwise().sum(), t.needs_grad(a), nullptr, [&t, a, cols](const Matrix& g) {
    Matrix full = g.col(0).replicate(1, cols);
    t.accumulate(a, full);
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index rows = a.rows(), cols = a.cols();
  return t.push(std::move(out), t.needs_grad(a), nullptr, [&t, a, rows, cols](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

inline Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Categorical pieces. Masks are matrices of 1.0 (allowed) / 0.0 (masked).
// ---------------------------------------------------------------------------

namespace detail {

/// Row-wise masked log-softmax values and probabilities.
inline void masked_log_softmax_values(const Matrix& x, const Matrix& mask, Matrix& logp, Matrix& p) {
  if (x.rows() != mask.rows() || x.cols() != mask.cols()) throw ShapeError("mask shape differs from logits");
  logp = Matrix::Zero(x.rows(), x.cols());
  p = Matrix::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) m = std::max(m, x(r, c));
    }
    if (!std::isfinite(m)) throw DomainError("masked softmax: every category is masked");
    double z = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) z += std::exp(x(r, c) - m);
    }
    const double lse = m + std::log(z);
    for (Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) {
        logp(r, c) = x(r, c) - lse;
        p(r, c) = std::exp(logp(r, c));
      }
    }
  }
}

}  // namespace detail

/// Log-probabilities of the renormalized softmax over unmasked entries;
/// masked entries hold 0 and receive no gradient.
inline Var masked_log_softmax(Var logits, const Matrix& mask) {
  Tape& t = *logits.tape;
  Matrix logp, p;
  detail::masked_log_softmax_values(logits.value(), mask, logp, p);
  return t.push(std::move(logp), t.needs_grad(logits), nullptr, [&t, logits, mask, p](const Matrix& g) {
    Matrix gm = g.cwiseProduct(mask);
    Matrix dx = gm - (p.array().colwise() * gm.rowwise().sum().array()).matrix();
    t.accumulate(logits, dx.cwiseProduct(mask));
  });
}

/// Entropy per row (n x 1) of the masked softmax.
inline Var masked_entropy(Var logits, const Matrix& mask) {
  Tape& t = *logits.tape;
  Matrix logp, p;
  detail::masked_log_softmax_values(logits.value(), mask, logp, p);
  Matrix h = -(p.cwiseProduct(logp)).rowwise().sum();
  return t.push(h, t.needs_grad(logits), nullptr, [&t, logits, logp, p, h](const Matrix& g) {
    // dH/dx_j = -p_j (log p_j + H)
    Matrix dx = -(p.array() * (logp.array().colwise() + h.col(0).array())).matrix();
    Matrix scaled = dx.array().colwise() * g.col(0).array();
    t.accumulate(logits, scaled);
  });
}

/// out(n, 0) = a(n, indices[n]).
inline Var pick(Var a, const std::vector<int>& indices) {
  Tape& t = *a.tape;
  if (static_cast<Index>(indices.size()) != a.rows()) throw ShapeError("pick: one index per row");
  Matrix out(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    const int c = indices[static_cast<std::size_t>(r)];
    if (c < 0 || c >= a.cols()) throw ShapeError("pick: index out of range");
    out(r, 0) = a.value()(r, c);
  }
  const Index rows = a.rows(), cols = a.cols();
  return t.push(std::move(out), t.needs_grad(a), nullptr, [&t, a, indices, rows, cols](const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    for (Index r = 0; r < rows; ++r) full(r, indices[static_cast<std::size_t>(r)]) = g(r, 0);
    t.accumulate(a, full);
  });
}

// ---------------------------------------------------------------------------
// Convenience
// ---------------------------------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

inline Matrix row_vector(const std::vector<double>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i];
  return m;
}

inline Matrix rows_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw ShapeError("rows_matrix: ragged rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  }
  return m;
}

inline Matrix column(const std::vector<double>& v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return m;
}

}  // namespace edgesplit::nn
