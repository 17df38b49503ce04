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

// DirMoE router: relaxed expert selection z~ from a Gumbel-Sigmoid gate and
// expert contributions theta from a reparameterized Dirichlet, combined into
// route weights r = normalize(z~ * theta + leak).

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dirmoe/errors.hpp"
#include "dirmoe/params.hpp"
#include "dirmoe/schedule.hpp"
#include "dirmoe/stochastics.hpp"
#include "dirmoe/tape.hpp"

namespace dirmoe {

struct RouterConfig {
  std::size_t d = 8;
  std::size_t experts = 8;
  std::size_t k = 1;
  double tau0 = 2.0;           // sets the gate bias tau0 * logit(k / E)
  double leak = 1e-3;
  double head_floor = 1e-4;
  bool shared_heads = false;   // one alpha_hi / alpha_lo head for all experts
  double init_alpha_hi = 2.0;  // head outputs at zero input
  double init_alpha_lo = 0.005;
  double init_std = 0.01;
  double z_threshold = 0.125;  // metrics only

  void validate() const {
    if (d == 0) throw ConfigError("must be positive", "router.d");
    if (experts < 2) throw ConfigError("need at least two experts", "router.experts");
    if (k < 1 || k >= experts) throw ConfigError("must satisfy 1 <= k < experts", "router.k");
    if (!(tau0 > 0.0)) throw ConfigError("must be positive", "router.tau0");
    if (!(leak >= 0.0)) throw ConfigError("must be nonnegative", "router.leak");
    if (!(head_floor > 0.0)) throw ConfigError("must be positive", "router.head_floor");
    if (!(init_alpha_hi > head_floor)) throw ConfigError("must exceed head_floor", "router.init_alpha_hi");
    if (!(init_alpha_lo > head_floor)) throw ConfigError("must exceed head_floor", "router.init_alpha_lo");
    if (!(init_std >= 0.0)) throw ConfigError("must be nonnegative", "router.init_std");
  }
};

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(exp(y) - 1), the inverse of softplus.
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

struct RouterParams {
  RouterConfig config;
  Linear logits;  // E x d
  Linear hi;      // E x d, or 1 x d when heads are shared
  Linear lo;

  static RouterParams create(ParameterStore& store, const RouterConfig& cfg, SeededStream& stream) {
    cfg.validate();
    const double e = static_cast<double>(cfg.experts);
    const double bias = cfg.tau0 * logit(static_cast<double>(cfg.k) / e);
    const std::size_t heads = cfg.shared_heads ? 1 : cfg.experts;
    RouterParams p;
    p.config = cfg;
    p.logits = Linear::create(store, "router.logits", cfg.experts, cfg.d, cfg.init_std, bias, stream);
    p.hi = Linear::create(store, "router.alpha_hi", heads, cfg.d, cfg.init_std,
                          inverse_softplus(cfg.init_alpha_hi - cfg.head_floor), stream);
    p.lo = Linear::create(store, "router.alpha_lo", heads, cfg.d, cfg.init_std,
                          inverse_softplus(cfg.init_alpha_lo - cfg.head_floor), stream);
    return p;
  }
};

// Noise consumed by one routed token; replaying it reproduces the route
// exactly at any parameter values.
struct RouteNoise {
  std::vector<double> logistic;
  std::vector<specfun::GammaLevels> levels;
};

struct GateSample {
  std::vector<double> logits;  // centered head output plus bias
  std::vector<double> noise;
  std::vector<double> z_tilde;
  double temperature = 1.0;
};

struct ConcentrationVector {
  std::vector<double> alphas;
  double scale = 1.0;
};

struct RouteWeights {
  std::vector<double> r;
  double active_count = 0.0;  // sum of z~
  std::vector<bool> active_mask;
};

struct RouteResult {
  RouteWeights weights;
  GateSample gate;
  DirichletSample theta;
  ConcentrationVector posterior;
  ConcentrationVector prior;
};

// --- graph builders ---------------------------------------------------------

struct GateNodes {
  ad::Var logits;
  std::vector<double> noise;
  ad::Var z;
  double tau = 1.0;
};

struct RouteNodes {
  GateNodes gate;
  ad::Var alpha_q;
  ad::Var alpha_p;  // built from stop-gradient gates
  ad::DirichletDraw draw;
  ad::Var r;

  RouteNoise noise() const { return {gate.noise, draw.levels()}; }
};

namespace detail {

inline void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("gate: temperature must be positive");
}

inline std::vector<double> draw_logistic(std::size_t n, SeededStream& stream) {
  std::vector<double> g(n);
  for (double& v : g) v = sample_logistic(stream);
  return g;
}

}  // namespace detail

inline GateNodes gate_nodes(ad::Var x, const RouterParams& params, const ParamVars& p, double tau,
                            std::vector<double> noise) {
  detail::check_tau(tau);
  if (noise.size() != params.config.experts) throw ShapeError("gate: noise length mismatch");
  ad::Tape& tape = *x.tape();
  // Centering acts on W x alone so the per-expert bias survives it.
  ad::Var logits = ad::add(ad::center(ad::matmul(p[params.logits.weight], x)), p[params.logits.bias]);
  ad::Var g = tape.constant(Tensor(noise.size(), 1, noise));
  ad::Var z = ad::sigmoid(ad::scale(ad::add(logits, g), 1.0 / tau));
  return {logits, std::move(noise), z, tau};
}

inline GateNodes gate_nodes(ad::Var x, const RouterParams& params, const ParamVars& p, double tau,
                            SeededStream& stream) {
  detail::check_tau(tau);
  return gate_nodes(x, params, p, tau, detail::draw_logistic(params.config.experts, stream));
}

// scale * (z * hi + (1 - z) * lo), elementwise.
inline ad::Var mix_concentrations(ad::Var z, ad::Var hi, ad::Var lo, double scale) {
  return ad::scale(ad::add(lo, ad::mul(z, ad::sub(hi, lo))), scale);
}

inline ad::Var posterior_alpha_nodes(ad::Var x, ad::Var z, const RouterParams& params,
                                     const ParamVars& p, double lambda_q) {
  const double floor = params.config.head_floor;
  ad::Var hi = ad::add_scalar(ad::softplus(params.hi(p, x)), floor);
  ad::Var lo = ad::add_scalar(ad::softplus(params.lo(p, x)), floor);
  return mix_concentrations(z, hi, lo, lambda_q);
}

inline ad::Var prior_alpha_nodes(ad::Var z, const ScheduleState& schedule) {
  ad::Tape& tape = *z.tape();
  ad::Var z_sg = ad::stop_gradient(z);
  const std::size_t rows = z_sg.value().rows, cols = z_sg.value().cols;
  ad::Var hi = tape.constant(Tensor(rows, cols, schedule.alpha_hi));
  ad::Var lo = tape.constant(Tensor(rows, cols, schedule.alpha_lo));
  return mix_concentrations(z_sg, hi, lo, schedule.lambda_p);
}

namespace detail {

template <typename DrawFn>
RouteNodes finish_route(GateNodes gate, ad::Var x, const RouterParams& params, const ParamVars& p,
                        const ScheduleState& schedule, double lambda_q, DrawFn draw) {
  RouteNodes out{std::move(gate), {}, {}, {}, {}};
  out.alpha_q = posterior_alpha_nodes(x, out.gate.z, params, p, lambda_q);
  out.alpha_p = prior_alpha_nodes(out.gate.z, schedule);
  out.draw = draw(out.alpha_q);
  out.r = ad::normalize_l1_with_leak(ad::mul(out.gate.z, out.draw.theta), params.config.leak);
  return out;
}

}  // namespace detail

// Algorithm 1, per token: gates, posterior and prior slabs, Dirichlet draw,
// route weights.
inline RouteNodes route_nodes(ad::Var x, const RouterParams& params, const ParamVars& p,
                              const ScheduleState& schedule, double lambda_q, SeededStream& stream) {
  GateNodes gate = gate_nodes(x, params, p, schedule.tau, stream);
  return detail::finish_route(std::move(gate), x, params, p, schedule, lambda_q,
                              [&stream](ad::Var a) { return ad::dirichlet_node(a, stream); });
}

inline RouteNodes route_nodes(ad::Var x, const RouterParams& params, const ParamVars& p,
                              const ScheduleState& schedule, double lambda_q, const RouteNoise& noise) {
  GateNodes gate = gate_nodes(x, params, p, schedule.tau, noise.logistic);
  return detail::finish_route(std::move(gate), x, params, p, schedule, lambda_q,
                              [&noise](ad::Var a) { return ad::dirichlet_node(a, noise.levels); });
}

// y = sum_i r_i E_i(x) from per-expert output nodes.
inline ad::Var moe_mix(std::span<const ad::Var> expert_outputs, ad::Var r) {
  if (expert_outputs.size() != r.size()) throw ShapeError("moe_mix: expert count mismatch");
  return ad::matmul(ad::stack_columns(expert_outputs), r);
}

// --- value-level API ----------------------------------------------------------

inline RouteWeights route_weights(std::vector<double> r, const std::vector<double>& z, double threshold) {
  RouteWeights w;
  w.r = std::move(r);
  w.active_mask.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    w.active_count += z[i];
    w.active_mask[i] = z[i] > threshold;
  }
  return w;
}

namespace detail {

inline void check_input(const Tensor& x, const RouterParams& params) {
  if (x.size() != params.config.d) throw ShapeError("router: input has length " + std::to_string(x.size()));
}

inline GateSample to_gate_sample(const GateNodes& g) {
  return {g.logits.value().data, g.noise, g.z.value().data, g.tau};
}

}  // namespace detail

inline GateSample gate_forward(const Tensor& x, const RouterParams& params, const ParameterStore& store,
                               double tau, SeededStream& stream) {
  detail::check_input(x, params);
  ad::Tape tape;
  const auto p = store.bind(tape, false);
  return detail::to_gate_sample(gate_nodes(tape.constant(x), params, p, tau, stream));
}

inline ConcentrationVector posterior_alphas(const Tensor& x, std::span<const double> z_tilde,
                                            const RouterParams& params, const ParameterStore& store,
                                            double lambda_q) {
  detail::check_input(x, params);
  if (z_tilde.size() != params.config.experts) throw ShapeError("posterior_alphas: gate length mismatch");
  ad::Tape tape;
  const auto p = store.bind(tape, false);
  ad::Var z = tape.constant(Tensor(z_tilde.size(), 1, {z_tilde.begin(), z_tilde.end()}));
  return {posterior_alpha_nodes(tape.constant(x), z, params, p, lambda_q).value().data, lambda_q};
}

inline ConcentrationVector prior_alphas(std::span<const double> z_sg, const ScheduleState& schedule) {
  ConcentrationVector out{std::vector<double>(z_sg.size()), schedule.lambda_p};
  for (std::size_t i = 0; i < z_sg.size(); ++i) {
    out.alphas[i] = schedule.lambda_p * (z_sg[i] * schedule.alpha_hi + (1.0 - z_sg[i]) * schedule.alpha_lo);
  }
  return out;
}

inline RouteResult to_route_result(const RouteNodes& n, double lambda_q, double lambda_p, double threshold) {
  RouteResult out;
  out.gate = detail::to_gate_sample(n.gate);
  out.weights = route_weights(n.r.value().data, out.gate.z_tilde, threshold);
  out.theta = n.draw.sample;
  out.posterior = {n.alpha_q.value().data, lambda_q};
  out.prior = {n.alpha_p.value().data, lambda_p};
  return out;
}

inline RouteResult route(const Tensor& x, const RouterParams& params, const ParameterStore& store,
                         const ScheduleState& schedule, double lambda_q, SeededStream& stream) {
  detail::check_input(x, params);
  ad::Tape tape;
  const auto p = store.bind(tape, false);
  const RouteNodes n = route_nodes(tape.constant(x), params, p, schedule, lambda_q, stream);
  return to_route_result(n, lambda_q, schedule.lambda_p, params.config.z_threshold);
}

using ExpertFn = std::function<Tensor(const Tensor&)>;

inline Tensor moe_forward(const Tensor& x, std::span<const ExpertFn> experts, const RouteWeights& r) {
  if (experts.size() != r.r.size()) throw ShapeError("moe_forward: expert count mismatch");
  Tensor y;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const Tensor out = experts[i](x);
    if (i == 0) y = Tensor(out.rows, out.cols);
    if (out.rows != y.rows || out.cols != y.cols) throw ShapeError("moe_forward: expert output shape mismatch");
    for (std::size_t j = 0; j < out.size(); ++j) y.data[j] += r.r[i] * out.data[j];
  }
  return y;
}

}  // namespace dirmoe
