#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "edgesplit/nn/autodiff.hpp"
#include "edgesplit/nn/checkpoint.hpp"
#include "edgesplit/nn/distributions.hpp"
#include "edgesplit/nn/gradcheck.hpp"
#include "edgesplit/nn/init.hpp"
#include "edgesplit/nn/layers.hpp"
#include "edgesplit/nn/optim.hpp"
#include "op_cases.hpp"

using namespace edgesplit;
using namespace edgesplit::nn;

namespace {

using optest::project;
using optest::random_matrix;

}  // namespace

TEST(FiniteDifferenceOps, EveryOperatorOnRandomShapes) {
  Rng rng(2024);
  for (const auto& c : optest::operator_cases()) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto res = optest::check_operator(c, rng);
      EXPECT_TRUE(res.ok) << c.name << " trial " << trial << " rel " << res.max_rel_error;
    }
  }
}

TEST(Backward, QuadraticGradient) {
  ParamStore store;
  auto& w = store.add("w", Matrix{{1.5, -2.0, 0.25}});
  Tape t;
  t.backward(sum(square(t.param(w))));
  EXPECT_EQ(w.grad, 2.0 * w.value);
}

TEST(Backward, NonScalarLossRejected) {
  ParamStore store;
  auto& w = store.add("w", Matrix::Ones(2, 2));
  Tape t;
  EXPECT_THROW(t.backward(t.param(w)), ShapeError);
}

TEST(Backward, UnusedParameterGetsZero) {
  ParamStore store;
  auto& used = store.add("used", Matrix::Ones(1, 2));
  auto& unused = store.add("unused", Matrix::Ones(3, 3));
  store.zero_grad();
  Tape t;
  t.backward(sum(t.param(used)));
  EXPECT_TRUE(unused.grad.isZero());
}

TEST(Backward, DetachedBranchContributesNothing) {
  ParamStore store;
  auto& w = store.add("w", Matrix{{0.7, -0.3}});
  Tape t;
  Var x = t.param(w);
  Var adv = detach(scale(x, 10.0));
  t.backward(sum(mul(x, adv)));
  // d/dw sum(w * c) with c constant = c
  EXPECT_EQ(w.grad, 10.0 * w.value);
}

TEST(Backward, MlpSoftmaxLogProbMatchesFiniteDifferences) {
  Rng rng(7);
  ParamStore store;
  Mlp mlp(store, "pi", {5, 7, 4}, 0.01, rng);
  const Matrix x = random_matrix(rng, 3, 5);
  Matrix mask = Matrix::Ones(3, 4);
  mask(1, 2) = 0.0;
  const std::vector<int> actions{0, 3, 1};
  const auto res = check_gradients(store, [&](Tape& t) {
    return mean(pick(masked_log_softmax(mlp(t, t.constant(x)), mask), actions));
  });
  EXPECT_TRUE(res.ok) << res.max_rel_error;
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  Rng rng(1);
  ParamStore store;
  Mlp mlp(store, "m", {3, 4, 2}, 1.0, rng);
  for (auto* p : store.all()) p->value.setZero();
  Tape t;
  EXPECT_TRUE(mlp(t, t.constant(Matrix::Ones(2, 3))).value().isZero());
}

TEST(Mlp, LinearHead) {
  Rng rng(1);
  ParamStore store;
  Mlp mlp(store, "m", {1, 1}, 1.0, rng);
  store.get("m.0.w").value(0, 0) = 2.5;
  Tape t;
  EXPECT_DOUBLE_EQ(mlp(t, t.constant(Matrix::Constant(1, 1, 3.0))).scalar(), 7.5);
}

TEST(Mlp, ShapeMismatch) {
  Rng rng(1);
  ParamStore store;
  Mlp mlp(store, "m", {3, 2}, 1.0, rng);
  Tape t;
  EXPECT_THROW(mlp(t, t.constant(Matrix::Ones(1, 4))), ShapeError);
}

TEST(Mlp, GradientsOnRandomShapes) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore store;
    const Index in = rng.uniform_int(1, 6), hid = rng.uniform_int(1, 8), out = rng.uniform_int(1, 4);
    Mlp mlp(store, "m", {in, hid, hid, out}, 1.0, rng);
    const Matrix x = random_matrix(rng, rng.uniform_int(1, 4), in);
    const Matrix w = random_matrix(rng, x.rows(), out);
    EXPECT_TRUE(check_gradients(store, [&](Tape& t) { return project(t, mlp(t, t.constant(x)), w); }).ok);
  }
}

TEST(Gru, ZeroEverythingGivesZero) {
  Rng rng(1);
  ParamStore store;
  GruCell gru(store, "g", 3, 4, rng);
  for (auto* p : store.all()) p->value.setZero();
  Tape t;
  EXPECT_TRUE(gru(t, t.constant(Matrix::Zero(1, 3)), t.constant(Matrix::Zero(1, 4))).value().isZero());
}

TEST(Gru, HiddenStaysInsideUnitInterval) {
  Rng rng(2);
  ParamStore store;
  GruCell gru(store, "g", 5, 6, rng);
  Tape t;
  Var h = t.constant(Matrix::Zero(2, 6));
  for (int s = 0; s < 30; ++s) {
    h = gru(t, t.constant(random_matrix(rng, 2, 5, 1.5)), h);
    EXPECT_LT(h.value().cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Gru, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    ParamStore store;
    const Index in = rng.uniform_int(1, 4), hid = rng.uniform_int(1, 5);
    GruCell gru(store, "g", in, hid, rng);
    const Matrix x1 = random_matrix(rng, 2, in), x2 = random_matrix(rng, 2, in);
    const Matrix w = random_matrix(rng, 2, hid);
    const auto res = check_gradients(store, [&](Tape& t) {
      Var h = gru(t, t.constant(x1), t.constant(Matrix::Zero(2, hid)));
      return project(t, gru(t, t.constant(x2), h), w);
    });
    EXPECT_TRUE(res.ok) << res.max_rel_error;
  }
}

TEST(Gru, ShapeMismatch) {
  Rng rng(1);
  ParamStore store;
  GruCell gru(store, "g", 3, 4, rng);
  Tape t;
  EXPECT_THROW(gru(t, t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 4))), ShapeError);
}

TEST(Attention, Examples) {
  const std::vector<double> q{1.0, 0.0};
  EXPECT_EQ(attention_weights(q, {{0.3, 0.1}, {0.3, 0.1}}, 2.0, {true, true}), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(attention_weights(q, {{0.3, 0.1}}, 2.0, {true}), (std::vector<double>{1.0}));
  const auto w = softmax_active({std::log(2.0), 0.0}, {true, true});
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
  const auto masked = attention_weights(q, {{1, 0}, {5, 0}, {2, 0}}, 1.0, {true, false, true});
  EXPECT_EQ(masked[1], 0.0);
  EXPECT_NEAR(masked[0] + masked[2], 1.0, 1e-12);
  EXPECT_THROW(attention_weights(q, {{1, 0}}, 1.0, {false}), DomainError);
}

TEST(Categorical, Examples) {
  MaskedCategorical d({0.0, 0.0, 0.0}, {true, false, true});
  EXPECT_DOUBLE_EQ(d.probs()[0], 0.5);
  EXPECT_EQ(d.probs()[1], 0.0);
  EXPECT_DOUBLE_EQ(d.probs()[2], 0.5);
  MaskedCategorical single({3.0, -1.0}, {false, true});
  EXPECT_EQ(single.log_prob(1), 0.0);
  Rng rng(1);
  for (int n = 0; n < 100; ++n) EXPECT_EQ(single.sample(rng), 1);
  EXPECT_THROW(MaskedCategorical({1.0}, {false}), DomainError);
}

TEST(Categorical, SoftmaxSumsToOne) {
  Rng rng(5);
  for (int n = 0; n < 200; ++n) {
    std::vector<double> logits;
    std::vector<bool> mask;
    const int c = rng.uniform_int(1, 9);
    for (int i = 0; i < c; ++i) {
      logits.push_back(rng.normal(0.0, 3.0));
      mask.push_back(rng.uniform01() < 0.6);
    }
    mask[static_cast<std::size_t>(rng.uniform_int(0, c - 1))] = true;
    MaskedCategorical d(logits, mask);
    double s = 0.0;
    for (int i = 0; i < c; ++i) {
      s += d.probs()[static_cast<std::size_t>(i)];
      if (!mask[static_cast<std::size_t>(i)]) {
        EXPECT_EQ(d.probs()[static_cast<std::size_t>(i)], 0.0);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Categorical, EmpiricalFrequencies) {
  MaskedCategorical d({0.5, -1.0, 2.0, 0.0}, {true, true, false, true});
  Rng rng(12);
  std::vector<double> counts(4, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(masked_sample(d, rng).index)] += 1.0;
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(counts[static_cast<std::size_t>(c)] / n, d.probs()[static_cast<std::size_t>(c)], 0.01);
  EXPECT_EQ(counts[2], 0.0);
}

TEST(Categorical, TapeLogSoftmaxAgreesWithNumeric) {
  const std::vector<double> logits{0.2, 1.3, -0.7};
  MaskedCategorical d(logits, {true, false, true});
  Tape t;
  const Matrix mask{{1.0, 0.0, 1.0}};
  const auto lp = masked_log_softmax(t.constant(row_vector(logits)), mask);
  EXPECT_NEAR(lp.value()(0, 0), d.log_prob(0), 1e-15);
  EXPECT_NEAR(lp.value()(0, 2), d.log_prob(2), 1e-15);
  EXPECT_NEAR(masked_entropy(t.constant(row_vector(logits)), mask).scalar(), d.entropy(), 1e-15);
}

TEST(OrthogonalInit, SquareGram) {
  Rng rng(1);
  const auto w = orthogonal_init(4, 4, 1.0, rng);
  EXPECT_LT((w.transpose() * w - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-5);
  const auto g = orthogonal_init(6, 6, 2.0, rng);
  EXPECT_LT((g.transpose() * g - 4.0 * Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(OrthogonalInit, WideRowsOrthonormal) {
  Rng rng(2);
  const auto w = orthogonal_init(2, 4, 1.0, rng);
  EXPECT_LT((w * w.transpose() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-5);
  const auto tall = orthogonal_init(7, 3, 1.0, rng);
  EXPECT_LT((tall.transpose() * tall - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(OrthogonalInit, Deterministic) {
  Rng a(9), b(9);
  EXPECT_EQ(orthogonal_init(5, 3, 1.0, a), orthogonal_init(5, 3, 1.0, b));
}

TEST(Optim, ClipAndAdamMoveAgainstGradient) {
  ParamStore store;
  auto& w = store.add("w", Matrix{{1.0, -2.0}});
  w.grad = Matrix{{3.0, 4.0}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(grad_norm(store), 1.0, 1e-9);
  Adam opt(store, 0.1);
  opt.step();
  EXPECT_LT(w.value(0, 0), 1.0);
  EXPECT_LT(w.value(0, 1), -2.0);
  Adam frozen(store, 0.0);
  const Matrix keep = w.value;
  frozen.step();
  EXPECT_EQ(w.value, keep);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(3);
  ParamStore store;
  Mlp mlp(store, "m", {3, 5, 2}, 1.0, rng);
  Checkpoint c;
  c.stores["m"] = params_to_json(store);
  c.rng["main"] = rng.state();
  c.extra["lambda"] = 0.123456789012345678;
  const auto path = ::testing::TempDir() + "ckpt.json";
  c.save(path);
  const auto back = Checkpoint::load(path);
  ParamStore other;
  Rng rng2(99);
  Mlp mlp2(other, "m", {3, 5, 2}, 1.0, rng2);
  params_from_json(other, back.stores.at("m"));
  for (std::size_t n = 0; n < store.size(); ++n) EXPECT_EQ(store.all()[n]->value, other.all()[n]->value);
  Rng restored(0);
  restored.set_state(back.rng.at("main"));
  EXPECT_EQ(restored.next_u64(), rng.next_u64());
  EXPECT_EQ(back.extra["lambda"].get<double>(), 0.123456789012345678);

  ParamStore wrong;
  Rng rng3(1);
  Mlp mlp3(wrong, "m", {3, 6, 2}, 1.0, rng3);
  EXPECT_THROW(params_from_json(wrong, back.stores.at("m")), ShapeError);
}
