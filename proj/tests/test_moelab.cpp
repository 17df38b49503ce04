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
#include <limits>
#include <numeric>
#include <vector>

#include "dirmoe/gradcheck.hpp"
#include "dirmoe/moelab.hpp"

namespace dirmoe {
namespace {

TaskConfig small_task() {
  TaskConfig tc;
  tc.d = 4;
  tc.clusters = 4;
  tc.n_train = 256;
  tc.n_eval = 128;
  return tc;
}

TrainConfig small_train(RouterKind kind = RouterKind::kDirMoE) {
  TrainConfig cfg;
  cfg.router_kind = kind;
  cfg.router.d = 4;
  cfg.router.experts = 4;
  cfg.steps = 20;
  cfg.batch = 8;
  cfg.log_every = 5;
  return cfg;
}

std::vector<const Tensor*> pointers(const std::vector<Tensor>& v, std::size_t begin, std::size_t end) {
  std::vector<const Tensor*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&v[i]);
  return out;
}

// Task ----------------------------------------------------------------------

TEST(Task, DeterministicForSeed) {
  const auto a = generate_task(small_task());
  const auto b = generate_task(small_task());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train.inputs[i].data, b.train.inputs[i].data);
    EXPECT_EQ(a.train.targets[i].data, b.train.targets[i].data);
  }
  TaskConfig other = small_task();
  other.seed = 8;
  EXPECT_NE(generate_task(other).train.inputs[0].data, a.train.inputs[0].data);
}

TEST(Task, LabelsBalanced) {
  TaskConfig tc = small_task();
  tc.n_train = 103;
  const auto task = generate_task(tc);
  std::vector<int> counts(tc.clusters, 0);
  for (auto c : task.train.labels) ++counts[c];
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  EXPECT_LE(*hi - *lo, 1);
}

TEST(Task, NoiselessTargetsFollowClusterMap) {
  TaskConfig tc = small_task();
  tc.noise_std = 0.0;
  const auto task = generate_task(tc);
  for (std::size_t i = 0; i < task.eval.size(); ++i) {
    const Tensor y = task.maps[task.eval.labels[i]](task.eval.inputs[i]);
    EXPECT_EQ(y.data, task.eval.targets[i].data);
  }
}

TEST(Task, RejectsBadConfig) {
  TaskConfig tc = small_task();
  tc.clusters = 1;
  EXPECT_THROW(generate_task(tc), ConfigError);
  tc = small_task();
  tc.noise_std = -1.0;
  EXPECT_THROW(generate_task(tc), ConfigError);
}

// Top-k baseline --------------------------------------------------------------

std::vector<double> topk_values(std::vector<double> logits, std::size_t k) {
  ad::Tape tape;
  return topk_softmax_nodes(tape.constant(Tensor::vector(logits)), k).value().data;
}

TEST(TopK, FullSoftmaxWhenKEqualsE) {
  const std::vector<double> logits{0.3, -1.2, 2.0, 0.1};
  const auto r = topk_values(logits, 4);
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r[i], std::exp(logits[i]) / z, 1e-15);
}

TEST(TopK, OneHotAtArgmax) {
  EXPECT_EQ(topk_values({0.3, -1.2, 2.0, 0.1}, 1), (std::vector<double>{0.0, 0.0, 1.0, 0.0}));
}

TEST(TopK, TiesGoToLowestIndex) {
  EXPECT_EQ(topk_values({0.7, 0.7, 0.7, 0.7}, 2), (std::vector<double>{0.5, 0.5, 0.0, 0.0}));
  EXPECT_THROW(topk_values({1.0, 2.0}, 3), DomainError);
  EXPECT_THROW(topk_values({1.0, 2.0}, 0), DomainError);
}

TEST(TopK, RouteWithZeroWeightsPicksFirstExperts) {
  RouterConfig rc;
  rc.d = 4;
  rc.experts = 4;
  rc.k = 2;
  rc.init_std = 0.0;
  ParameterStore store;
  SeededStream stream(3);
  const auto params = RouterParams::create(store, rc, stream);
  const auto w = topk_softmax_route(Tensor::vector({1.0, -2.0, 0.5, 3.0}), params, store, 2);
  EXPECT_EQ(w.r, (std::vector<double>{0.5, 0.5, 0.0, 0.0}));
  EXPECT_EQ(w.active_count, 2.0);
}

// Batched forward -------------------------------------------------------------

TEST(BatchPass, MatchesTokenByToken) {
  const auto task = generate_task(small_task());
  const TrainConfig cfg = small_train();
  const Model model = Model::create(cfg);
  const auto sched = schedule_at(cfg.schedule, 0);
  const std::size_t n = 6;

  ad::Tape tape;
  const auto p = model.store.bind(tape);
  SeededStream s1(5);
  const auto xs = pointers(task.train.inputs, 0, n);
  const auto ys = pointers(task.train.targets, 0, n);
  const BatchPass batch = batch_pass(tape, model, p, cfg, sched, xs, ys, s1);

  SeededStream s2(5);
  double mean_task = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    ad::Tape t1;
    const auto p1 = model.store.bind(t1);
    const BatchPass one = batch_pass(t1, model, p1, cfg, sched, pointers(task.train.inputs, j, j + 1),
                                     pointers(task.train.targets, j, j + 1), s2);
    for (std::size_t i = 0; i < cfg.router.d; ++i) EXPECT_NEAR(one.y.value()(i, 0), batch.y.value()(i, j), 1e-14);
    EXPECT_EQ(one.tokens[0].r.value().data, batch.tokens[j].r.value().data);
    EXPECT_NEAR(one.tokens[0].task_loss, batch.tokens[j].task_loss, 1e-14);
    mean_task += one.task_loss.scalar() / static_cast<double>(n);
  }
  EXPECT_NEAR(batch.task_loss.scalar(), mean_task, 1e-14);
}

TEST(BatchPass, RejectsMismatchedTargets) {
  const auto task = generate_task(small_task());
  const TrainConfig cfg = small_train();
  const Model model = Model::create(cfg);
  ad::Tape tape;
  const auto p = model.store.bind(tape);
  SeededStream s(1);
  EXPECT_THROW(batch_pass(tape, model, p, cfg, schedule_at(cfg.schedule, 0), pointers(task.train.inputs, 0, 3),
                          pointers(task.train.targets, 0, 2), s),
               ShapeError);
}

// Full Top-k model: router, experts and mixing are deterministic, so every
// parameter can be checked against finite differences.
TEST(BatchPass, TopKModelGradientsMatchFiniteDifferences) {
  const auto task = generate_task(small_task());
  TrainConfig cfg = small_train(RouterKind::kTopKSoftmax);
  cfg.router.k = cfg.objective.k_target = 2;
  cfg.router.init_std = 0.5;
  const Model model = Model::create(cfg);
  const auto sched = schedule_at(cfg.schedule, 0);
  const auto xs = pointers(task.train.inputs, 0, 5);
  const auto ys = pointers(task.train.targets, 0, 5);
  const ad::GraphFn fn = [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
    const ParamVars p(leaves.begin(), leaves.end());
    SeededStream s(1);
    return batch_pass(tape, model, p, cfg, sched, xs, ys, s).task_loss;
  };
  const auto result = ad::gradcheck(fn, model.store.snapshot());
  EXPECT_GT(result.checked, 100u);
  EXPECT_LE(result.max_rel_error, 1e-6);
}

// Training --------------------------------------------------------------------

TEST(Train, ZeroStepsGivesInitialMetricsOnly) {
  const auto task = generate_task(small_task());
  TrainConfig cfg = small_train();
  cfg.steps = 0;
  std::vector<StepMetrics> seen;
  const auto result = train(cfg, task, [&](const StepMetrics& m) { seen.push_back(m); });
  ASSERT_EQ(result.history.size(), 1u);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(result.history[0].step, 0);
  EXPECT_EQ(result.history[0].learning_rate, 0.0);
  const Model fresh = Model::create(cfg);
  for (std::size_t i = 0; i < fresh.store.size(); ++i) {
    EXPECT_EQ(result.model.store.value(i).data, fresh.store.value(i).data);
  }
}

void expect_identical(const StepMetrics& a, const StepMetrics& b) {
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.total_loss, b.total_loss);
  EXPECT_EQ(a.task_loss, b.task_loss);
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_EQ(a.kl, b.kl);
  EXPECT_EQ(a.sparsity_penalty, b.sparsity_penalty);
  EXPECT_EQ(a.mean_active, b.mean_active);
  EXPECT_EQ(a.max_active, b.max_active);
  EXPECT_EQ(a.simpson_r, b.simpson_r);
  EXPECT_EQ(a.grad_norm, b.grad_norm);
  EXPECT_EQ(a.load, b.load);
  EXPECT_EQ(a.usage, b.usage);
}

TEST(Train, BitIdenticalAcrossRuns) {
  const auto task = generate_task(small_task());
  for (auto kind : {RouterKind::kDirMoE, RouterKind::kTopKSoftmax}) {
    const TrainConfig cfg = small_train(kind);
    const auto a = train(cfg, task);
    const auto b = train(cfg, task);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) expect_identical(a.history[i], b.history[i]);
    EXPECT_EQ(a.eval.task_loss, b.eval.task_loss);
  }
}

TEST(Train, SeedChangesHistory) {
  const auto task = generate_task(small_task());
  TrainConfig cfg = small_train();
  const auto a = train(cfg, task);
  cfg.seed += 1;
  const auto b = train(cfg, task);
  EXPECT_NE(a.history.back().total_loss, b.history.back().total_loss);
}

TEST(Train, LoggedMetricsSatisfySimplexInvariants) {
  const auto task = generate_task(small_task());
  for (auto kind : {RouterKind::kDirMoE, RouterKind::kTopKSoftmax}) {
    const auto result = train(small_train(kind), task);
    ASSERT_EQ(result.history.size(), 5u);  // steps 0, 5, 10, 15, 20
    EXPECT_EQ(result.history.back().step, 20);
    EXPECT_TRUE(result.finite_gradients);
    for (const auto& m : result.history) {
      EXPECT_NEAR(std::accumulate(m.load.begin(), m.load.end(), 0.0), 1.0, 1e-12);
      for (double v : m.load) EXPECT_GE(v, 0.0);
      for (const auto& row : m.usage) {
        if (std::accumulate(row.begin(), row.end(), 0.0) == 0.0) continue;
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
      }
      EXPECT_GE(m.simpson_r, 1.0 / 4.0 - 1e-12);
      EXPECT_LE(m.simpson_r, 1.0 + 1e-12);
      EXPECT_TRUE(std::isfinite(m.grad_norm));
      EXPECT_LE(m.max_active, 4.0);
    }
  }
}

TEST(Train, SchedulesFollowStepCounter) {
  const auto task = generate_task(small_task());
  const TrainConfig cfg = small_train();
  const auto result = train(cfg, task);
  ScheduleConstants sc = cfg.schedule;
  sc.total_steps = static_cast<std::int64_t>(cfg.steps);
  for (const auto& m : result.history) {
    const auto s = schedule_at(sc, m.step);
    EXPECT_NEAR(m.tau, s.tau, 1e-12);
    EXPECT_NEAR(m.lambda_p, s.lambda_p, 1e-12);
  }
  EXPECT_NEAR(result.history.back().tau, cfg.schedule.tau_min, 1e-12);
}

TEST(Train, NonFiniteLossAborts) {
  auto task = generate_task(small_task());
  for (auto& y : task.train.targets) y.data[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train(small_train(), task), DivergenceError);
  EXPECT_THROW(train(small_train(RouterKind::kTopKSoftmax), task), DivergenceError);
}

TEST(Train, ConfigValidation) {
  const auto task = generate_task(small_task());
  TrainConfig cfg = small_train();
  cfg.balance_loss = 0.1;
  EXPECT_THROW(train(cfg, task), ConfigError);
  cfg = small_train();
  cfg.objective.k_target = 2;
  EXPECT_THROW(train(cfg, task), ConfigError);
  cfg = small_train();
  cfg.router.d = 5;
  EXPECT_THROW(train(cfg, task), ConfigError);
}

TEST(Train, BalanceLossRunsForBaseline) {
  const auto task = generate_task(small_task());
  TrainConfig cfg = small_train(RouterKind::kTopKSoftmax);
  cfg.balance_loss = 0.01;
  const auto with = train(cfg, task);
  cfg.balance_loss = 0.0;
  const auto without = train(cfg, task);
  EXPECT_NE(with.history.back().total_loss, without.history.back().total_loss);
}

TEST(BalanceLoss, UniformRoutingGivesOne) {
  ad::Tape tape;
  std::vector<TokenPass> passes(8);
  for (std::size_t j = 0; j < passes.size(); ++j) {
    Tensor r(4, 1, 0.0);
    r.data[j % 4] = 1.0;
    passes[j].r = tape.constant(r);
    passes[j].logits = tape.constant(Tensor(4, 1, 0.3));
  }
  EXPECT_NEAR(detail::balance_loss(tape, passes, 4).scalar(), 1.0, 1e-15);
}

TEST(DenseBaseline, FiniteAndDeterministic) {
  const auto task = generate_task(small_task());
  const TrainConfig cfg = small_train();
  const double a = train_dense_baseline(cfg, task);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_EQ(a, train_dense_baseline(cfg, task));
}

// Specialization ---------------------------------------------------------------

TEST(Specialization, TotalVariationFromUniform) {
  EXPECT_DOUBLE_EQ(tv_from_uniform(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.0);
  EXPECT_DOUBLE_EQ(tv_from_uniform(std::vector<double>{1.0, 0.0, 0.0, 0.0}), 0.75);
  EXPECT_DOUBLE_EQ(tv_from_uniform(std::vector<double>{0.5, 0.5, 0.0, 0.0}), 0.5);
}

TEST(Specialization, HardAssignmentScoresMaximal) {
  constexpr std::size_t kE = 8;
  ad::Tape tape;
  RouteAccumulator acc(kE, kE, 0.125);
  for (std::size_t j = 0; j < 64; ++j) {
    const std::size_t c = j % kE;
    TokenPass t;
    Tensor r(kE, 1, 0.0);
    r.data[c] = 1.0;
    t.r = tape.constant(r);
    t.z.assign(kE, 0.0);
    t.z[c] = 1.0;
    acc.add(t, c, false);
  }
  const auto rep = acc.specialization();
  EXPECT_DOUBLE_EQ(rep.score, (kE - 1.0) / kE);
  EXPECT_DOUBLE_EQ(rep.count_score, (kE - 1.0) / kE);
  for (std::size_t c = 0; c < kE; ++c) EXPECT_EQ(rep.route_mass[c][c], 1.0);
}

// At init the logits are nearly constant, so routing ignores the cluster and
// the score is the sampling noise of the per-cluster means.
TEST(Specialization, UntrainedRouterNearUniform) {
  TaskConfig tc = small_task();
  tc.clusters = 8;
  tc.n_eval = 2048;
  const auto task = generate_task(tc);
  TrainConfig cfg = small_train();
  cfg.router.experts = 8;
  const Model model = Model::create(cfg);
  const auto sched = schedule_at(cfg.schedule, 0);
  const auto rep = evaluate(model, cfg, sched, task.eval, tc.clusters).specialization;

  // Noise level: E|mean - mu| ~ sqrt(2 / pi) sd / sqrt(n) per entry.
  ad::Tape tape;
  const auto p = model.store.bind(tape, false);
  SeededStream s(11);
  const auto batch = batch_pass(tape, model, p, cfg, sched, pointers(task.eval.inputs, 0, 1024),
                                pointers(task.eval.targets, 0, 1024), s);
  double noise = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    double m = 0.0, m2 = 0.0;
    for (const auto& t : batch.tokens) {
      m += t.r.value().data[i];
      m2 += t.r.value().data[i] * t.r.value().data[i];
    }
    m /= 1024.0;
    const double sd = std::sqrt(m2 / 1024.0 - m * m);
    noise += 0.5 * std::sqrt(2.0 / std::numbers::pi) * sd / std::sqrt(2048.0 / 8.0);
  }
  EXPECT_LT(rep.score, 3.0 * noise);
  EXPECT_LT(rep.score, 0.2);
}

TEST(RouterKind, StringRoundTrip) {
  EXPECT_EQ(router_kind_from_string("dirmoe"), RouterKind::kDirMoE);
  EXPECT_EQ(router_kind_from_string(to_string(RouterKind::kTopKSoftmax)), RouterKind::kTopKSoftmax);
  EXPECT_THROW(router_kind_from_string("softmax"), ConfigError);
}

}  // namespace
}  // namespace dirmoe
