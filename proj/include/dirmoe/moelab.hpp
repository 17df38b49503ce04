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

// Desk-scale MoE laboratory: a clustered regression task, small MLP experts,
// the DirMoE router and a Top-k softmax baseline, and the training loop with
// routing and specialization metrics.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dirmoe/calibration.hpp"
#include "dirmoe/errors.hpp"
#include "dirmoe/objective.hpp"
#include "dirmoe/optim.hpp"
#include "dirmoe/params.hpp"
#include "dirmoe/router.hpp"
#include "dirmoe/schedule.hpp"

namespace dirmoe {

// ---------------------------------------------------------------------------
// Synthetic task

struct TaskConfig {
  std::size_t d = 8;
  std::size_t clusters = 8;
  double center_scale = 1.0;  // cluster centers ~ N(0, center_scale^2 I)
  double spread = 0.35;       // within-cluster std
  double map_gain = 1.5;      // scale of each cluster's linear map before tanh
  double noise_std = 0.05;
  std::size_t n_train = 4096;
  std::size_t n_eval = 1024;
  std::uint64_t seed = 7;

  void validate() const {
    if (d == 0) throw ConfigError("must be positive", "task.d");
    if (clusters < 2) throw ConfigError("need at least two clusters", "task.clusters");
    if (!(center_scale >= 0.0)) throw ConfigError("must be nonnegative", "task.center_scale");
    if (!(spread >= 0.0)) throw ConfigError("must be nonnegative", "task.spread");
    if (!(noise_std >= 0.0)) throw ConfigError("must be nonnegative", "task.noise_std");
    if (n_train == 0) throw ConfigError("must be positive", "task.n_train");
  }
};

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  std::vector<std::size_t> labels;  // generating cluster
  std::size_t size() const noexcept { return inputs.size(); }
};

// Cluster c maps x to tanh(A_c x + b_c).
struct ClusterMap {
  Tensor a;
  Tensor b;

  Tensor operator()(const Tensor& x) const {
    Tensor y(a.rows, 1);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double acc = b.data[i];
      for (std::size_t j = 0; j < a.cols; ++j) acc += a(i, j) * x.data[j];
      y.data[i] = std::tanh(acc);
    }
    return y;
  }
};

struct SyntheticTask {
  TaskConfig config;
  std::vector<Tensor> centers;
  std::vector<ClusterMap> maps;
  Dataset train;
  Dataset eval;
};

namespace detail {

inline Dataset draw_split(const TaskConfig& cfg, const std::vector<Tensor>& centers,
                          const std::vector<ClusterMap>& maps, std::size_t n, SeededStream stream) {
  Dataset ds;
  ds.inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % cfg.clusters;  // round robin keeps labels balanced
    Tensor x = centers[c];
    for (double& v : x.data) v += cfg.spread * sample_normal(stream);
    Tensor y = maps[c](x);
    for (double& v : y.data) v += cfg.noise_std * sample_normal(stream);
    ds.inputs.push_back(std::move(x));
    ds.targets.push_back(std::move(y));
    ds.labels.push_back(c);
  }
  return ds;
}

}  // namespace detail

inline SyntheticTask generate_task(const TaskConfig& cfg) {
  cfg.validate();
  SyntheticTask task;
  task.config = cfg;
  SeededStream stream(cfg.seed, 0);
  const double gain = cfg.map_gain / std::sqrt(static_cast<double>(cfg.d));
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    task.centers.push_back(normal_tensor(cfg.d, 1, cfg.center_scale, stream));
    task.maps.push_back({normal_tensor(cfg.d, cfg.d, gain, stream), normal_tensor(cfg.d, 1, 0.5, stream)});
  }
  task.train = detail::draw_split(cfg, task.centers, task.maps, cfg.n_train, SeededStream(cfg.seed, 1));
  task.eval = detail::draw_split(cfg, task.centers, task.maps, cfg.n_eval, SeededStream(cfg.seed, 2));
  return task;
}

// ---------------------------------------------------------------------------
// Model

enum class RouterKind { kDirMoE, kTopKSoftmax };

inline const char* to_string(RouterKind k) { return k == RouterKind::kDirMoE ? "dirmoe" : "topk_softmax"; }

inline RouterKind router_kind_from_string(const std::string& s) {
  if (s == "dirmoe") return RouterKind::kDirMoE;
  if (s == "topk_softmax") return RouterKind::kTopKSoftmax;
  throw ConfigError("expected \"dirmoe\" or \"topk_softmax\", got \"" + s + "\"", "train.router_kind");
}

// GELU MLP d -> 4d -> d.
struct ExpertMlp {
  Linear hidden;
  Linear out;

  static ExpertMlp create(ParameterStore& store, const std::string& name, std::size_t d, SeededStream& stream) {
    ExpertMlp e;
    e.hidden = Linear::create(store, name + ".hidden", 4 * d, d, 1.0 / std::sqrt(double(d)), 0.0, stream);
    e.out = Linear::create(store, name + ".out", d, 4 * d, 1.0 / std::sqrt(double(4 * d)), 0.0, stream);
    return e;
  }

  // x is d x n: one token per column.
  ad::Var operator()(const ParamVars& p, ad::Var x) const {
    const ad::Var h = ad::gelu(ad::add_columnwise(ad::matmul(p[hidden.weight], x), p[hidden.bias]));
    return ad::add_columnwise(ad::matmul(p[out.weight], h), p[out.bias]);
  }
};

struct TrainConfig {
  RouterKind router_kind = RouterKind::kDirMoE;
  RouterConfig router;
  ObjectiveConfig objective;
  ScheduleConstants schedule;
  OptimizerConfig optimizer;
  double lambda_q = 20.0;
  double balance_loss = 0.0;  // Top-k baseline only
  std::size_t steps = 1500;
  std::size_t batch = 32;
  std::size_t log_every = 50;
  std::uint64_t seed = 1234;

  void validate() const {
    router.validate();
    objective.validate(router.experts);
    schedule.validate();
    optimizer.validate();
    if (!(lambda_q > 0.0)) throw ConfigError("must be positive", "train.lambda_q");
    if (!(balance_loss >= 0.0)) throw ConfigError("must be nonnegative", "train.balance_loss");
    if (balance_loss > 0.0 && router_kind == RouterKind::kDirMoE) {
      throw ConfigError("only applies to the topk_softmax router", "train.balance_loss");
    }
    if (batch == 0) throw ConfigError("must be positive", "train.batch");
    if (log_every == 0) throw ConfigError("must be positive", "train.log_every");
    if (objective.k_target != router.k) throw ConfigError("must equal router.k", "objective.k_target");
  }
};

struct Model {
  RouterKind kind = RouterKind::kDirMoE;
  ParameterStore store;
  RouterParams router;   // DirMoE heads, or only router.logits for Top-k
  Decoder decoder;       // DirMoE only
  std::vector<ExpertMlp> experts;

  static Model create(const TrainConfig& cfg) {
    Model m;
    m.kind = cfg.router_kind;
    SeededStream stream(cfg.seed, 100);
    m.router = RouterParams::create(m.store, cfg.router, stream);
    for (std::size_t i = 0; i < cfg.router.experts; ++i) {
      m.experts.push_back(ExpertMlp::create(m.store, "expert" + std::to_string(i), cfg.router.d, stream));
    }
    if (m.kind == RouterKind::kDirMoE) m.decoder = Decoder::create(m.store, cfg.router.experts, cfg.router.d, stream);
    return m;
  }
};

// Softmax over the k largest logits, zeros elsewhere; ties go to the lower index.
inline std::vector<bool> topk_mask(std::span<const double> logits, std::size_t k) {
  if (k < 1 || k > logits.size()) throw DomainError("topk: need 1 <= k <= E");
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  std::vector<bool> mask(logits.size(), false);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
  return mask;
}

inline ad::Var topk_softmax_nodes(ad::Var logits, std::size_t k) {
  return ad::masked_softmax(logits, topk_mask(logits.value().span(), k));
}

inline RouteWeights topk_softmax_route(const Tensor& x, const RouterParams& params, const ParameterStore& store,
                                       std::size_t k) {
  ad::Tape tape;
  const auto p = store.bind(tape, false);
  const auto r = topk_softmax_nodes(params.logits(p, tape.constant(x)), k);
  RouteWeights w;
  w.r = r.value().data;
  w.active_mask.resize(w.r.size());
  for (std::size_t i = 0; i < w.r.size(); ++i) w.active_mask[i] = w.r[i] > 0.0;
  w.active_count = static_cast<double>(k);
  return w;
}

// One token's routing graph plus the values the metrics need.
struct TokenPass {
  ad::Var routing_loss;  // DirMoE objective; zero for the baseline
  ad::Var r;
  ad::Var logits;        // Top-k: raw router logits (for the balance loss)
  std::vector<double> z;
  std::vector<double> theta;
  double task_loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double sparsity = 0.0;
};

// A minibatch: per-token routing, experts evaluated on all tokens at once.
struct BatchPass {
  std::vector<TokenPass> tokens;
  ad::Var y;          // d x n
  ad::Var task_loss;  // mean over tokens and dimensions
  ad::Var routing_loss;  // mean over tokens
};

inline ad::Var task_loss(ad::Var y, ad::Var target) {
  return ad::mean(ad::square(ad::sub(y, target)));
}

inline TokenPass route_token(ad::Tape& tape, const Model& model, const ParamVars& p, const TrainConfig& cfg,
                             const ScheduleState& sched, const Tensor& input, SeededStream& stream) {
  TokenPass out;
  ad::Var x = tape.constant(input);
  if (model.kind == RouterKind::kDirMoE) {
    const RouteNodes route = route_nodes(x, model.router, p, sched, cfg.lambda_q, stream);
    const LossNodes loss = dirmoe_loss(x, route, model.decoder, p, cfg.objective);
    out.r = route.r;
    out.routing_loss = loss.total;
    out.z = route.gate.z.value().data;
    out.theta = route.draw.sample.theta;
    out.reconstruction = loss.reconstruction.scalar();
    out.kl = loss.kl.scalar();
    out.sparsity = loss.sparsity.scalar();
  } else {
    out.logits = model.router.logits(p, x);
    out.r = topk_softmax_nodes(out.logits, cfg.router.k);
    out.routing_loss = tape.constant(Tensor(1, 1, 0.0));
  }
  return out;
}

inline Tensor columns(std::span<const Tensor* const> vs) {
  Tensor m(vs.front()->size(), vs.size());
  for (std::size_t j = 0; j < vs.size(); ++j)
    for (std::size_t i = 0; i < m.rows; ++i) m(i, j) = vs[j]->data[i];
  return m;
}

inline BatchPass batch_pass(ad::Tape& tape, const Model& model, const ParamVars& p, const TrainConfig& cfg,
                            const ScheduleState& sched, std::span<const Tensor* const> inputs,
                            std::span<const Tensor* const> targets, SeededStream& stream) {
  const std::size_t n = inputs.size();
  if (n == 0 || targets.size() != n) throw ShapeError("batch_pass: empty batch or target count mismatch");
  BatchPass out;
  out.tokens.reserve(n);
  std::vector<ad::Var> rs;
  rs.reserve(n);
  ad::Var routing = tape.constant(Tensor(1, 1, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    out.tokens.push_back(route_token(tape, model, p, cfg, sched, *inputs[j], stream));
    rs.push_back(out.tokens.back().r);
    routing = ad::add(routing, out.tokens.back().routing_loss);
  }
  out.routing_loss = ad::scale(routing, 1.0 / static_cast<double>(n));
  const ad::Var x = tape.constant(columns(inputs));
  const ad::Var r = ad::stack_columns(rs);
  ad::Var y;
  for (std::size_t e = 0; e < model.experts.size(); ++e) {
    const ad::Var ye = ad::scale_columns(model.experts[e](p, x), ad::row(r, e));
    y = e == 0 ? ye : ad::add(y, ye);
  }
  out.y = y;
  const Tensor target = columns(targets);
  out.task_loss = task_loss(y, tape.constant(target));
  const Tensor& yv = y.value();
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < yv.rows; ++i) acc += (yv(i, j) - target(i, j)) * (yv(i, j) - target(i, j));
    out.tokens[j].task_loss = acc / static_cast<double>(yv.rows);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct StepMetrics {
  std::int64_t step = 0;
  double total_loss = 0.0;
  double task_loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double sparsity_penalty = 0.0;
  double mean_active = 0.0;        // mean sum of z~ (k for the baseline)
  double mean_active_count = 0.0;  // mean count of z~ above the threshold
  double max_active = 0.0;         // max count of z~ above the threshold
  double simpson_r = 0.0;
  double simpson_theta = 0.0;
  double grad_norm = 0.0;
  double tau = 0.0;
  double lambda_p = 0.0;
  double learning_rate = 0.0;
  std::vector<double> load;                // per-expert mean route mass
  std::vector<std::vector<double>> usage;  // cluster x expert mean route mass
};

using MetricsSink = std::function<void(const StepMetrics&)>;

// Per-cluster expert usage and its mean total-variation distance from uniform.
struct SpecializationReport {
  std::vector<std::vector<double>> route_mass;  // cluster x expert, rows sum to 1
  std::vector<std::vector<double>> counts;      // thresholded active counts, rows normalized
  double score = 0.0;                           // from route_mass
  double count_score = 0.0;
};

inline double tv_from_uniform(std::span<const double> p) {
  const double u = 1.0 / static_cast<double>(p.size());
  double acc = 0.0;
  for (double v : p) acc += std::abs(v - u);
  return 0.5 * acc;
}

inline double mean_tv_from_uniform(const std::vector<std::vector<double>>& rows) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& row : rows) {
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (total <= 0.0) continue;
    std::vector<double> p(row);
    for (double& v : p) v /= total;
    acc += tv_from_uniform(p);
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

// Accumulates route statistics over tokens.
class RouteAccumulator {
 public:
  RouteAccumulator(std::size_t experts, std::size_t clusters, double threshold)
      : threshold_(threshold), load_(experts, 0.0), mass_(clusters, std::vector<double>(experts, 0.0)),
        counts_(clusters, std::vector<double>(experts, 0.0)), per_cluster_(clusters, 0) {}

  void add(const TokenPass& t, std::size_t cluster, bool hard_baseline) {
    const auto& r = t.r.value().data;
    ++tokens_;
    ++per_cluster_[cluster];
    double count = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      load_[i] += r[i];
      mass_[cluster][i] += r[i];
      const bool active = hard_baseline ? r[i] > 0.0 : t.z[i] > threshold_;
      if (active) {
        counts_[cluster][i] += 1.0;
        count += 1.0;
      }
    }
    sum_z_ += hard_baseline ? count : std::accumulate(t.z.begin(), t.z.end(), 0.0);
    count_sum_ += count;
    max_count_ = std::max(max_count_, count);
    simpson_r_ += simpson_sq(r);
    if (!t.theta.empty()) simpson_theta_ += simpson_sq(t.theta);
    task_ += t.task_loss;
    recon_ += t.reconstruction;
    kl_ += t.kl;
    sparsity_ += t.sparsity;
  }

  void fill(StepMetrics& m) const {
    const double n = static_cast<double>(std::max<std::size_t>(tokens_, 1));
    m.task_loss = task_ / n;
    m.reconstruction = recon_ / n;
    m.kl = kl_ / n;
    m.sparsity_penalty = sparsity_ / n;
    m.mean_active = sum_z_ / n;
    m.mean_active_count = count_sum_ / n;
    m.max_active = max_count_;
    m.simpson_r = simpson_r_ / n;
    m.simpson_theta = simpson_theta_ / n;
    m.load = load_;
    const double total = std::accumulate(load_.begin(), load_.end(), 0.0);
    for (double& v : m.load) v /= total;
    m.usage = normalized_rows(mass_);
  }

  SpecializationReport specialization() const {
    SpecializationReport rep;
    rep.route_mass = normalized_rows(mass_);
    rep.counts = normalized_rows(counts_);
    rep.score = mean_tv_from_uniform(rep.route_mass);
    rep.count_score = mean_tv_from_uniform(rep.counts);
    return rep;
  }

 private:
  static double simpson_sq(const std::vector<double>& p) {
    double s = 0.0;
    for (double v : p) s += v * v;
    return s;
  }

  static std::vector<std::vector<double>> normalized_rows(const std::vector<std::vector<double>>& rows) {
    auto out = rows;
    for (auto& row : out) {
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      if (total > 0.0)
        for (double& v : row) v /= total;
    }
    return out;
  }

  double threshold_;
  std::vector<double> load_;
  std::vector<std::vector<double>> mass_;
  std::vector<std::vector<double>> counts_;
  std::vector<std::size_t> per_cluster_;
  std::size_t tokens_ = 0;
  double sum_z_ = 0.0, count_sum_ = 0.0, max_count_ = 0.0;
  double simpson_r_ = 0.0, simpson_theta_ = 0.0;
  double task_ = 0.0, recon_ = 0.0, kl_ = 0.0, sparsity_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training

struct EvalMetrics {
  double task_loss = 0.0;
  double mean_active = 0.0;
  double mean_active_count = 0.0;
  double max_active = 0.0;
  double simpson_r = 0.0;
  std::vector<double> load;
  SpecializationReport specialization;
};

struct TrainResult {
  Model model;
  std::vector<StepMetrics> history;
  EvalMetrics eval;
  bool finite_gradients = true;  // every step's gradient norm was finite
  double max_grad_norm = 0.0;
};

inline constexpr std::uint64_t kEvalStream = 0x5eed0e7a1ull;
inline constexpr std::size_t kEvalChunk = 256;

// Routes every example of `data` with fresh noise and no gradient.
inline EvalMetrics evaluate(const Model& model, const TrainConfig& cfg, const ScheduleState& sched,
                            const Dataset& data, std::size_t clusters) {
  RouteAccumulator acc(cfg.router.experts, clusters, cfg.router.z_threshold);
  SeededStream stream(cfg.seed, kEvalStream);
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    std::vector<const Tensor*> xs, ys;
    for (std::size_t i = start; i < end; ++i) {
      xs.push_back(&data.inputs[i]);
      ys.push_back(&data.targets[i]);
    }
    ad::Tape tape;
    const auto p = model.store.bind(tape, false);
    const BatchPass pass = batch_pass(tape, model, p, cfg, sched, xs, ys, stream);
    for (std::size_t i = start; i < end; ++i) {
      acc.add(pass.tokens[i - start], data.labels[i], model.kind == RouterKind::kTopKSoftmax);
    }
  }
  StepMetrics m;
  acc.fill(m);
  EvalMetrics out;
  out.task_loss = m.task_loss;
  out.mean_active = m.mean_active;
  out.mean_active_count = m.mean_active_count;
  out.max_active = m.max_active;
  out.simpson_r = m.simpson_r;
  out.load = m.load;
  out.specialization = acc.specialization();
  return out;
}

inline SpecializationReport specialization_report(const Model& model, const TrainConfig& cfg,
                                                  const SyntheticTask& task) {
  const auto sched = schedule_at(cfg.schedule, static_cast<std::int64_t>(cfg.steps));
  return evaluate(model, cfg, sched, task.eval, task.config.clusters).specialization;
}

namespace detail {

// Switch-style auxiliary loss E * sum_i f_i P_i over the batch, f_i the hard
// routed fraction (no gradient) and P_i the mean full-softmax probability.
inline ad::Var balance_loss(ad::Tape& tape, std::span<const TokenPass> passes, std::size_t experts) {
  std::vector<double> f(experts, 0.0);
  ad::Var probs = tape.constant(Tensor(experts, 1, 0.0));
  for (const auto& t : passes) {
    const auto& r = t.r.value().data;
    for (std::size_t i = 0; i < experts; ++i)
      if (r[i] > 0.0) f[i] += 1.0;
    probs = ad::add(probs, ad::softmax(t.logits));
  }
  const double n = static_cast<double>(passes.size());
  for (double& v : f) v /= n;
  return ad::scale(ad::dot(tape.constant(Tensor(experts, 1, f)), probs), static_cast<double>(experts) / n);
}

}  // namespace detail

// Algorithm 1 over minibatches: schedules, per-token routing, MoE output,
// task loss plus routing objective, AdamW update.
inline TrainResult train(const TrainConfig& cfg, const SyntheticTask& task, const MetricsSink& sink = {}) {
  cfg.validate();
  if (cfg.router.d != task.config.d) throw ConfigError("must equal task.d", "router.d");
  TrainResult result{Model::create(cfg), {}, {}, true, 0.0};
  Model& model = result.model;
  AdamW opt(model.store, cfg.optimizer);
  ScheduleConstants sc = cfg.schedule;
  sc.total_steps = static_cast<std::int64_t>(cfg.steps);
  ScheduleState sched = schedule_at(sc, 0);
  SeededStream data_stream(cfg.seed, 1);
  SeededStream noise_root(cfg.seed, 2);
  const std::size_t clusters = task.config.clusters;
  const auto total = static_cast<std::int64_t>(cfg.steps);

  for (std::int64_t t = 0; t <= total; ++t) {
    SeededStream noise = noise_root.split(static_cast<std::uint64_t>(t));
    ad::Tape tape;
    const auto p = model.store.bind(tape);
    std::vector<const Tensor*> xs, ys;
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto idx = static_cast<std::size_t>(data_stream.uniform() * static_cast<double>(task.train.size()));
      xs.push_back(&task.train.inputs[idx]);
      ys.push_back(&task.train.targets[idx]);
      labels.push_back(task.train.labels[idx]);
    }
    const BatchPass pass = batch_pass(tape, model, p, cfg, sched, xs, ys, noise);
    const auto& passes = pass.tokens;
    ad::Var loss = ad::add(pass.task_loss, pass.routing_loss);
    if (cfg.balance_loss > 0.0) {
      loss = ad::add(loss, ad::scale(detail::balance_loss(tape, passes, cfg.router.experts), cfg.balance_loss));
    }
    if (!std::isfinite(loss.scalar())) {
      throw DivergenceError("non-finite loss at step " + std::to_string(t));
    }
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(p.size());
    for (const auto& v : p) grads.push_back(v.grad());
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) {
      result.finite_gradients = false;
      throw DivergenceError("non-finite gradient norm at step " + std::to_string(t));
    }
    result.max_grad_norm = std::max(result.max_grad_norm, norm);
    const double lr = learning_rate_at(cfg.optimizer, std::min(t, total - 1), total);

    if (t % static_cast<std::int64_t>(cfg.log_every) == 0 || t == total) {
      RouteAccumulator acc(cfg.router.experts, clusters, cfg.router.z_threshold);
      for (std::size_t b = 0; b < passes.size(); ++b) {
        acc.add(passes[b], labels[b], model.kind == RouterKind::kTopKSoftmax);
      }
      StepMetrics m;
      acc.fill(m);
      m.step = t;
      m.total_loss = loss.scalar();
      m.grad_norm = norm;
      m.tau = sched.tau;
      m.lambda_p = sched.lambda_p;
      m.learning_rate = t < total ? lr : 0.0;
      if (sink) sink(m);
      result.history.push_back(std::move(m));
    }
    if (t == total) break;
    opt.step(model.store, grads, lr);
    sched = step_schedules(sched);
  }
  result.eval = evaluate(model, cfg, sched, task.eval, clusters);
  return result;
}

// Single dense expert of the same shape trained on the task loss alone.
inline double train_dense_baseline(const TrainConfig& cfg, const SyntheticTask& task) {
  ParameterStore store;
  SeededStream init(cfg.seed, 100);
  const ExpertMlp expert = ExpertMlp::create(store, "dense", task.config.d, init);
  AdamW opt(store, cfg.optimizer);
  SeededStream data_stream(cfg.seed, 1);
  const auto total = static_cast<std::int64_t>(cfg.steps);
  for (std::int64_t t = 0; t < total; ++t) {
    ad::Tape tape;
    const auto p = store.bind(tape);
    std::vector<const Tensor*> xs, ys;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto idx = static_cast<std::size_t>(data_stream.uniform() * static_cast<double>(task.train.size()));
      xs.push_back(&task.train.inputs[idx]);
      ys.push_back(&task.train.targets[idx]);
    }
    tape.backward(task_loss(expert(p, tape.constant(columns(xs))), tape.constant(columns(ys))));
    std::vector<Tensor> grads;
    for (const auto& v : p) grads.push_back(v.grad());
    opt.step(store, grads, learning_rate_at(cfg.optimizer, t, total));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < task.eval.size(); ++i) {
    ad::Tape tape;
    const auto p = store.bind(tape, false);
    acc += task_loss(expert(p, tape.constant(task.eval.inputs[i])), tape.constant(task.eval.targets[i])).scalar();
  }
  return acc / static_cast<double>(task.eval.size());
}

}  // namespace dirmoe
