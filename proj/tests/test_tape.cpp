/* Copyright 2026 The DirMoE Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dirmoe/gradcheck.hpp"
#include "dirmoe/tape.hpp"

namespace dirmoe::ad {
namespace {

TEST(TapeOps, SigmoidAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0}));
  Var y = sigmoid(x);
  EXPECT_DOUBLE_EQ(y.scalar(), 0.5);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad().data[0], 0.25);
}

TEST(TapeOps, SigmoidSaturatesWithoutOverflow) {
  Tape tape;
  Var y = sigmoid(tape.leaf(Tensor::vector({-800.0, 800.0})));
  EXPECT_EQ(y.value().data[0], 0.0);
  EXPECT_EQ(y.value().data[1], 1.0);
}

TEST(TapeOps, LeakNormalizeAllLeak) {
  Tape tape;
  Var y = normalize_l1_with_leak(tape.constant(Tensor(8, 1, 0.0)), 1e-3);
  for (double v : y.value().data) EXPECT_DOUBLE_EQ(v, 1.0 / 8.0);
}

TEST(TapeOps, LeakNormalizeAlreadySimplex) {
  Tape tape;
  Var y = normalize_l1_with_leak(tape.constant(Tensor::vector({1.0, 0.0, 0.0, 0.0})), 0.0);
  EXPECT_EQ(y.value().data, (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(TapeOps, LeakNormalizeSimplexAndFloor) {
  SeededStream stream(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 30;
    const double eps = trial % 3 == 0 ? 0.0 : 1e-3;
    Tensor v(n, 1);
    for (double& x : v.data) x = trial % 5 == 0 ? 0.0 : stream.uniform() * 10.0;
    v.data[0] += 1.0;
    Tape tape;
    Var y = normalize_l1_with_leak(tape.constant(v), eps);
    const double total = dirmoe::sum(v.span()) + static_cast<double>(n) * eps;
    EXPECT_NEAR(dirmoe::sum(y.value().span()), 1.0, 1e-12);
    for (double yi : y.value().data) EXPECT_GE(yi, eps / total * (1.0 - 1e-12));
  }
}

TEST(TapeOps, LeakNormalizeRejectsNegative) {
  Tape tape;
  EXPECT_THROW(normalize_l1_with_leak(tape.constant(Tensor::vector({0.5, -0.1})), 1e-3), DomainError);
  EXPECT_THROW(normalize_l1_with_leak(tape.constant(Tensor::vector({0.0, 0.0})), 0.0), DomainError);
}

TEST(TapeOps, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.leaf(Tensor(3, 1));
  Var b = tape.leaf(Tensor(4, 1));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, b), ShapeError);
  Tape other;
  EXPECT_THROW(add(a, other.leaf(Tensor(3, 1))), ShapeError);
}

TEST(TapeOps, ScalarBroadcast) {
  Tape tape;
  Var s = tape.leaf(Tensor::vector({2.0}));
  Var v = tape.leaf(Tensor::vector({1.0, 2.0, 3.0}));
  tape.backward(sum(mul(s, v)));
  EXPECT_DOUBLE_EQ(s.grad().data[0], 6.0);
  for (double g : v.grad().data) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(StopGradient, OneFactorDetached) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({3.0}));
  tape.backward(mul(x, stop_gradient(x)));
  EXPECT_DOUBLE_EQ(x.grad().data[0], 3.0);
}

TEST(StopGradient, FullyDetached) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({3.0}));
  Var y = stop_gradient(x);
  EXPECT_DOUBLE_EQ(y.scalar(), 3.0);
  EXPECT_FALSE(y.requires_grad());
  tape.backward(y);
  EXPECT_EQ(x.grad().data[0], 0.0);
}

TEST(Backward, SquaredNormOfMatVec) {
  Tape tape;
  Tensor w(3, 4);
  Tensor xv(4, 1);
  SeededStream stream(5);
  for (double& v : w.data) v = sample_normal(stream);
  for (double& v : xv.data) v = sample_normal(stream);
  Var W = tape.leaf(w);
  Var x = tape.constant(xv);
  Var wx = matmul(W, x);
  tape.backward(sum(square(wx)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(W.grad()(i, j), 2.0 * wx.value().data[i] * xv.data[j], 1e-12);
}

TEST(Backward, ConstantLossHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  Var c = tape.constant(Tensor::vector({4.0}));
  tape.backward(c);
  for (double g : x.grad().data) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarRootThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(exp(x)), std::logic_error);
}

TEST(Backward, RepeatedCallsAgree) {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({0.3, 1.2, 2.0}));
  Var loss = sum(mul(softplus(a), log(add_scalar(a, 1.0))));
  tape.backward(loss);
  const Tensor first = a.grad();
  tape.backward(loss);
  EXPECT_EQ(a.grad().data, first.data);
}

TEST(DirichletNode, SumOfThetaHasZeroGradient) {
  Tape tape;
  SeededStream stream(17);
  Var alphas = tape.leaf(Tensor::vector({0.4, 1.5, 3.0, 0.05}));
  auto draw = dirichlet_node(alphas, stream);
  tape.backward(sum(draw.theta));
  for (double g : alphas.grad().data) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(DirichletNode, BackwardMatchesJacobian) {
  Tape tape;
  SeededStream stream(23);
  Var alphas = tape.leaf(Tensor::vector({0.7, 2.0, 5.0}));
  auto draw = dirichlet_node(alphas, stream);
  Var weights = tape.constant(Tensor::vector({1.0, -2.0, 0.5}));
  tape.backward(dot(draw.theta, weights));
  const Tensor jac = implicit_dirichlet_jacobian(draw.sample);
  for (std::size_t j = 0; j < 3; ++j) {
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expected += weights.value().data[i] * jac(i, j);
    EXPECT_NEAR(alphas.grad().data[j], expected, 1e-12);
  }
}

TEST(DirichletNode, ReplayFromLevels) {
  Tape tape;
  SeededStream stream(29);
  Var alphas = tape.leaf(Tensor::vector({0.3, 1.0, 4.0}));
  auto draw = dirichlet_node(alphas, stream);
  const auto levels = draw.levels();
  auto again = dirichlet_node(alphas, levels);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(again.theta.value().data[i], draw.theta.value().data[i], 1e-12);
  }
}

// Pathwise MC of d E[theta_0] / d alpha for Dir(1, 1, 2): analytic
// d/dalpha_0 [alpha_0 / alpha_sum] = (alpha_sum - alpha_0) / alpha_sum^2 = 3/16.
TEST(DirichletNode, MonteCarloMeanGradient) {
  SeededStream stream(31);
  constexpr int kDraws = 100000;
  double acc0 = 0.0, acc2 = 0.0;
  for (int n = 0; n < kDraws; ++n) {
    Tape tape;
    Var alphas = tape.leaf(Tensor::vector({1.0, 1.0, 2.0}));
    auto draw = dirichlet_node(alphas, stream);
    tape.backward(dot(draw.theta, tape.constant(Tensor::vector({1.0, 0.0, 0.0}))));
    acc0 += alphas.grad().data[0];
    acc2 += alphas.grad().data[2];
  }
  EXPECT_NEAR(acc0 / kDraws, 3.0 / 16.0, 0.03 * 3.0 / 16.0);
  EXPECT_NEAR(acc2 / kDraws, -1.0 / 16.0, 0.03 * 1.0 / 16.0);
}

// Random 3-expert loss: alphas from a softplus head, a Dirichlet draw at
// fixed levels, then a gated mixture of linear experts against a target.
TEST(GradCheck, FullGraphThreeExperts) {
  SeededStream stream(37);
  auto randn = [&](std::size_t r, std::size_t c, double s) {
    Tensor t(r, c);
    for (double& v : t.data) v = s * sample_normal(stream);
    return t;
  };
  const Tensor x = randn(4, 1, 1.0);
  const Tensor target = randn(4, 1, 1.0);
  const Tensor experts = randn(4, 3, 1.0);
  std::vector<Tensor> params = {randn(3, 4, 0.5), randn(3, 1, 0.5), randn(3, 4, 0.5)};

  std::vector<specfun::GammaLevels> levels;
  {
    Tape tape;
    Var head = softplus(affine(tape.constant(params[0]), tape.constant(x), tape.constant(params[1])));
    levels = dirichlet_node(add_scalar(head, 1e-4), stream).levels();
  }
  const GraphFn fn = [&](Tape& tape, std::span<const Var> p) {
    Var xv = tape.constant(x);
    Var alphas = add_scalar(softplus(affine(p[0], xv, p[1])), 1e-4);
    Var theta = dirichlet_node(alphas, levels).theta;
    Var gate = sigmoid(matmul(p[2], xv));
    Var r = normalize_l1_with_leak(mul(gate, theta), 1e-3);
    Var y = matmul(tape.constant(experts), r);
    Var prior = tape.constant(Tensor::vector({0.5, 0.5, 0.5}));
    return add(sum(square(sub(y, tape.constant(target)))), scale(dirichlet_kl(alphas, prior), 0.1));
  };
  const auto result = gradcheck(fn, params);
  EXPECT_EQ(result.checked, 27u);
  EXPECT_LE(result.max_rel_error, 1e-3)
      << "param " << result.worst_param << " index " << result.worst_index << " analytic "
      << result.analytic << " numeric " << result.numeric;
}

TEST(GradCheck, ElementwiseOps) {
  SeededStream stream(41);
  Tensor a(5, 1), b(5, 1);
  for (double& v : a.data) v = 0.2 + 2.0 * stream.uniform();
  for (double& v : b.data) v = sample_normal(stream);
  const GraphFn fn = [](Tape&, std::span<const Var> p) {
    Var t = add(mul(tanh(p[1]), log(p[0])), gelu(sub(p[1], exp(scale(p[0], -1.0)))));
    Var s = softmax(center(t));
    return add(mean(square(t)), dot(s, p[1]));
  };
  const auto result = gradcheck(fn, {a, b});
  EXPECT_LE(result.max_rel_error, 1e-6);
}

TEST(GradCheck, MaskedSoftmaxAndStack) {
  SeededStream stream(43);
  Tensor a(4, 1), b(4, 1);
  for (double& v : a.data) v = sample_normal(stream);
  for (double& v : b.data) v = sample_normal(stream);
  const GraphFn fn = [](Tape& tape, std::span<const Var> p) {
    Var s = masked_softmax(p[0], {true, false, true, true});
    const Var cols[] = {s, p[1]};
    Var m = stack_columns(cols);
    Var w = tape.constant(Tensor::vector({1.0, -0.5}));
    return sum(square(matmul(m, w)));
  };
  const auto result = gradcheck(fn, {a, b});
  EXPECT_LE(result.max_rel_error, 1e-6);
}

TEST(GradCheck, ColumnwiseOps) {
  SeededStream stream(47);
  Tensor m(3, 4), b(3, 1), r(2, 4), w(5, 3);
  for (Tensor* t : {&m, &b, &r, &w})
    for (double& v : t->data) v = sample_normal(stream);
  const GraphFn fn = [](Tape&, std::span<const Var> p) {
    Var h = add_columnwise(matmul(p[3], p[0]), matmul(p[3], p[1]));
    Var y = add(scale_columns(h, row(p[2], 0)), scale_columns(tanh(h), row(p[2], 1)));
    return mean(square(y));
  };
  const auto result = gradcheck(fn, {m, b, r, w});
  EXPECT_LE(result.max_rel_error, 1e-6);
}

TEST(Columnwise, ShapeChecks) {
  Tape tape;
  Var m = tape.leaf(Tensor(3, 4, 1.0));
  EXPECT_THROW(add_columnwise(m, tape.leaf(Tensor(4, 1, 1.0))), ShapeError);
  EXPECT_THROW(scale_columns(m, tape.leaf(Tensor(3, 1, 1.0))), ShapeError);
  EXPECT_THROW(row(m, 3), ShapeError);
  const Tensor& r = row(m, 2).value();
  EXPECT_EQ(r.rows, 4u);
  EXPECT_EQ(r.cols, 1u);
}

TEST(Tape, ValueReferencesSurviveGrowth) {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({1.0, 2.0}));
  const Tensor& ref = a.value();
  for (int i = 0; i < 10000; ++i) tape.constant(Tensor(1, 1, double(i)));
  EXPECT_EQ(&ref, &a.value());
  EXPECT_EQ(ref.data[1], 2.0);
}

}  // namespace
}  // namespace dirmoe::ad
