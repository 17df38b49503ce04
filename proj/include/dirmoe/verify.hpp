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

// Named property checks with fixed seeds. Each check compares a computed value
// against a tolerance chosen by the caller and records what it saw.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "dirmoe/calibration.hpp"
#include "dirmoe/divergence.hpp"
#include "dirmoe/gradcheck.hpp"
#include "dirmoe/moelab.hpp"
#include "dirmoe/objective.hpp"
#include "dirmoe/specfun.hpp"
#include "dirmoe/stochastics.hpp"

namespace dirmoe::verify {

struct Check {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured statistic (error, z-score, ...)
  double tolerance = 0.0;  // pass when value <= tolerance unless stated otherwise
  std::string detail;
};

struct Suite {
  std::string name;
  std::vector<Check> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

inline Check at_most(std::string name, double value, double tolerance, std::string detail = {}) {
  return {std::move(name), value <= tolerance, value, tolerance, std::move(detail)};
}

inline Check holds(std::string name, bool ok, std::string detail = {}) {
  return {std::move(name), ok, ok ? 0.0 : 1.0, 0.0, std::move(detail)};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Options {
  std::uint64_t seed = 20260101;
  std::size_t mc_samples = 1000000;
};

// ---------------------------------------------------------------------------
// calibration

// Closed-form E[H] against Monte Carlo for random (lambda, beta) at each E.
inline std::vector<Check> expected_simpson_vs_mc(const Options& o, std::vector<std::size_t> sizes,
                                                 std::size_t per_size, double max_z) {
  std::vector<Check> out;
  SeededStream draw(o.seed, 0x11);
  for (std::size_t e : sizes) {
    for (std::size_t rep = 0; rep < per_size; ++rep) {
      const double lambda = std::exp(std::log(0.05) + draw.uniform() * std::log(20.0 / 0.05));
      std::vector<double> betas(e);
      for (double& b : betas) b = 0.2 + 2.8 * draw.uniform();
      const double closed = expected_simpson(lambda, betas);
      const auto mc = mc_expected_simpson(lambda, betas, o.mc_samples, o.seed + 1000 * e + rep);
      out.push_back(at_most("expected_simpson_mc[E=" + std::to_string(e) + ",#" + std::to_string(rep) + "]",
                            mc.z_score(closed), max_z,
                            "lambda " + fmt(lambda) + " closed " + fmt(closed) + " mc " + fmt(mc.mean) + " se " +
                                fmt(mc.std_error)));
    }
  }
  return out;
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * static_cast<double>(i) / double(n - 1));
  }
  return g;
}

// Strict decrease of f(lambda) on a log grid and both limits.
inline std::vector<Check> monotone_sparsity_limits(std::size_t experts, double limit_tol) {
  const std::vector<double> betas(experts, 1.0);
  const auto grid = log_grid(1e-6, 1e6, 20);
  const auto rep = verify_monotone_sparsity(betas, grid, 0, 0);
  std::vector<Check> out;
  out.push_back(holds("simpson_strictly_decreasing", rep.strictly_decreasing));
  out.push_back(holds("simpson_rational_form", rep.rational_form_matches));
  out.push_back(holds("simpson_slope_negative", rep.slope_negative));
  out.push_back(at_most("simpson_limit_small_lambda", std::abs(rep.points.front().closed_form - 1.0), limit_tol,
                        "f(1e-6) = " + fmt(rep.points.front().closed_form)));
  out.push_back(at_most("simpson_limit_large_lambda", std::abs(rep.points.back().closed_form - rep.limit_high),
                        limit_tol, "f(1e6) = " + fmt(rep.points.back().closed_form) + " vs " + fmt(rep.limit_high)));
  return out;
}

struct SimpsonTarget {
  double h;
  std::size_t experts;
};

// Round trip through lambda_from_simpson; a target the inverse rejects fails the check.
inline Check simpson_round_trip(const std::vector<SimpsonTarget>& targets, double tol) {
  double worst = 0.0;
  std::string detail;
  for (const auto& t : targets) {
    try {
      const std::vector<double> ones(t.experts, 1.0);
      worst = std::max(worst, std::abs(expected_simpson(lambda_from_simpson(t.h, t.experts), ones) - t.h));
    } catch (const DomainError& e) {
      worst = INFINITY;
      detail += "h=" + fmt(t.h) + ",E=" + std::to_string(t.experts) + ": " + e.what() + "; ";
    }
  }
  return at_most("simpson_round_trip", worst, tol, detail);
}

inline Check simpson_inverse_rejects_out_of_range() {
  auto rejects = [](double h, std::size_t e) {
    try {
      lambda_from_simpson(h, e);
    } catch (const DomainError&) {
      return true;
    }
    return false;
  };
  return holds("simpson_inverse_rejects_h_le_1_over_E", rejects(0.2, 4) && rejects(0.125, 8) && rejects(1.0, 8));
}

inline Check table_ratio(double tol) {
  const double r = ratio_from_mass(0.85, 8, 1);
  return at_most("ratio_from_mass_table", std::abs(r - 39.67), tol, "r = " + fmt(r));
}

struct VarianceSetting {
  std::size_t experts;
  std::size_t active;
  double m;
  double v_tar;
  double alpha_lo;
};

inline std::vector<VarianceSetting> variance_settings() {
  return {{8, 1, 0.85, 0.01, 1.0}, {4, 2, 0.7, 0.02, 0.5}, {16, 2, 0.6, 0.005, 0.05}};
}

// Var(T) at the calibrated lambda against MC, and E[T] across lambda.
inline std::vector<Check> beta_calibrator_vs_mc(const Options& o, double max_z) {
  std::vector<Check> out;
  std::uint64_t salt = 0;
  for (const auto& s : variance_settings()) {
    const double hi = ratio_from_mass(s.m, s.experts, s.active) * s.alpha_lo;
    const double lambda = lambda_from_variance(s.m, s.v_tar, s.active, s.experts, hi, s.alpha_lo);
    const auto mc = mc_mass(hi, s.alpha_lo, lambda, s.experts, s.active, o.mc_samples, o.seed + ++salt);
    const std::string tag = "[E=" + std::to_string(s.experts) + ",s=" + std::to_string(s.active) + "]";
    out.push_back(at_most("mass_variance_mc" + tag, mc.variance.z_score(s.v_tar), max_z,
                          "lambda " + fmt(lambda) + " mc var " + fmt(mc.variance.mean) + " se " +
                              fmt(mc.variance.std_error)));
    for (double l : {0.1, 1.0, 10.0}) {
      const auto m = mc_mass(hi, s.alpha_lo, l, s.experts, s.active, o.mc_samples, o.seed + ++salt);
      out.push_back(at_most("mass_mean_mc" + tag + "[lambda=" + fmt(l) + "]", m.mean.z_score(s.m), max_z,
                            "mc mean " + fmt(m.mean.mean) + " se " + fmt(m.mean.std_error)));
    }
  }
  return out;
}

inline Check table_variance_lambda(double tol) {
  const double hi = ratio_from_mass(0.85, 8, 1);
  const double lambda = lambda_from_variance(0.85, 0.01, 1, 8, hi, 1.0);
  return at_most("variance_lambda_table", std::abs(lambda - 11.75 / (hi + 7.0)), tol, "lambda = " + fmt(lambda));
}

inline Check marginal_variance_vs_mc(const Options& o, double max_z) {
  const std::vector<double> a{2.0, 3.0, 5.0};
  const auto closed = dirichlet_marginal_variance(a);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, mc_marginal(a, i, o.mc_samples, o.seed + 77 + i).variance.z_score(closed[i]));
  }
  return at_most("marginal_variance_mc", worst, max_z);
}

inline Suite calibration_suite(const Options& o) {
  Suite s{"calibration", {}};
  for (auto& c : expected_simpson_vs_mc(o, {2, 8, 32}, 2, 3.0)) s.checks.push_back(std::move(c));
  for (auto& c : monotone_sparsity_limits(8, 1e-4)) s.checks.push_back(std::move(c));
  s.checks.push_back(simpson_round_trip({{0.5, 4}, {0.9, 4}, {0.2, 8}, {0.5, 8}, {0.9, 8}}, 1e-12));
  s.checks.push_back(simpson_inverse_rejects_out_of_range());
  s.checks.push_back(table_ratio(0.05));
  s.checks.push_back(table_variance_lambda(1e-12));
  for (auto& c : beta_calibrator_vs_mc(o, 3.0)) s.checks.push_back(std::move(c));
  s.checks.push_back(marginal_variance_vs_mc(o, 3.0));
  return s;
}

// ---------------------------------------------------------------------------
// objective

inline std::vector<Check> dirichlet_kl_vs_mc(const Options& o, std::size_t pairs, double max_z) {
  std::vector<Check> out;
  SeededStream draw(o.seed, 0x22);
  double self_worst = 0.0;
  for (std::size_t n = 0; n < pairs; ++n) {
    const std::size_t e = 2 + n % 5;
    std::vector<double> q(e), p(e);
    for (double& v : q) v = 0.5 + 4.5 * draw.uniform();
    for (double& v : p) v = 0.5 + 4.5 * draw.uniform();
    const double closed = dirichlet_kl(q, p);
    const auto mc = mc_dirichlet_kl(q, p, o.mc_samples, o.seed + 500 + n);
    out.push_back(at_most("dirichlet_kl_mc[#" + std::to_string(n) + "]", mc.z_score(closed), max_z,
                          "closed " + fmt(closed) + " mc " + fmt(mc.mean) + " se " + fmt(mc.std_error)));
    self_worst = std::max(self_worst, dirichlet_kl(q, q));
  }
  out.push_back(at_most("dirichlet_kl_self", self_worst, 1e-10));
  return out;
}

// (sum_i (p_i - pi))^2 <= E sum_i (p_i - pi)^2 on random vectors, exactly.
inline Check spike_cauchy_schwarz(std::uint64_t seed, std::size_t trials) {
  SeededStream draw(seed, 0x33);
  std::size_t violations = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t e = 2 + t % 31;
    std::vector<double> p(e);
    double total = 0.0;
    for (double& v : p) total += (v = draw.uniform());
    for (double& v : p) v /= total;
    const double pi = draw.uniform();
    long double lin = 0.0L, sq = 0.0L;
    for (double v : p) {
      lin += v - pi;
      sq += (v - pi) * (v - pi);
    }
    if (lin * lin > static_cast<long double>(e) * sq * (1.0L + 1e-15L)) ++violations;
  }
  return at_most("spike_cauchy_schwarz", static_cast<double>(violations), 0.0,
                 std::to_string(trials) + " probability vectors");
}

// Exact spike KL >= (1 - slack) * quadratic bound for |p_i - pi| <= radius.
inline Check spike_local_bound(std::uint64_t seed, double slack, double radius) {
  SeededStream draw(seed, 0x44);
  double worst = INFINITY;
  constexpr std::size_t kE = 8;
  for (std::size_t j = 1; j < kE; ++j) {
    const double pi = static_cast<double>(j) / kE;
    for (int t = 0; t < 2000; ++t) {
      std::vector<double> p(kE);
      for (double& v : p) v = pi + radius * (2.0 * draw.uniform() - 1.0);
      const auto c = spike_kl_surrogate_check(p, pi, pi * kE);
      if (c.quadratic_lb > 0.0) worst = std::min(worst, c.exact_kl / c.quadratic_lb);
    }
  }
  return {"spike_local_bound", worst >= 1.0 - slack, worst, 1.0 - slack,
          "min exact / bound over pi in {1/8..7/8} (pass when value >= tolerance)"};
}

inline Check objective_arithmetic() {
  const std::vector<double> x{1.0, 2.0}, xh{0.0, 0.0};
  const std::vector<double> z{0.5, 0.5, 0.5};
  const bool ok = reconstruction_loss(x, xh, 0.5) == 5.0 && sparsity_penalty(z, 1.0, 0.1) == 0.1 * 0.25;
  return holds("objective_arithmetic", ok);
}

inline Suite objective_suite(const Options& o) {
  Suite s{"objective", {}};
  for (auto& c : dirichlet_kl_vs_mc(o, 5, 3.0)) s.checks.push_back(std::move(c));
  s.checks.push_back(spike_cauchy_schwarz(o.seed, 10000));
  s.checks.push_back(spike_local_bound(o.seed, 0.10, 0.05));
  s.checks.push_back(objective_arithmetic());
  return s;
}

// ---------------------------------------------------------------------------
// gradients

// Total loss (task + reconstruction + KL + sparsity) of a small DirMoE at
// fixed noise; stop-gradient prior values are frozen at the base point.
inline ad::GradCheckResult full_model_gradcheck(std::uint64_t seed, std::size_t d = 8, std::size_t experts = 3) {
  TrainConfig cfg;
  cfg.router.d = d;
  cfg.router.experts = experts;
  cfg.router.init_std = 0.4;
  cfg.objective.beta_theta = 0.5;
  cfg.objective.lambda_sparsity = 0.3;
  cfg.seed = seed;
  const Model model = Model::create(cfg);
  ScheduleConstants sc = cfg.schedule;
  sc.total_steps = 100;
  const auto sched = schedule_at(sc, 30);

  SeededStream stream(seed, 1);
  const Tensor x = normal_tensor(d, 1, 1.0, stream);
  const Tensor target = normal_tensor(d, 1, 0.5, stream);
  RouteNoise noise;
  Tensor frozen_prior;
  {
    ad::Tape tape;
    const auto base = route_nodes(tape.constant(x), model.router, model.store.bind(tape), sched, cfg.lambda_q, stream);
    noise = base.noise();
    frozen_prior = base.alpha_p.value();
  }
  const ad::GraphFn fn = [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
    const ParamVars p(leaves.begin(), leaves.end());
    const ad::Var xv = tape.constant(x);
    RouteNodes route = route_nodes(xv, model.router, p, sched, cfg.lambda_q, noise);
    route.alpha_p = tape.constant(frozen_prior);
    std::vector<ad::Var> outs;
    for (const auto& e : model.experts) outs.push_back(e(p, xv));
    const ad::Var y = moe_mix(outs, route.r);
    return ad::add(task_loss(y, tape.constant(target)), dirmoe_loss(xv, route, model.decoder, p, cfg.objective).total);
  };
  return ad::gradcheck(fn, model.store.snapshot());
}

inline Check implicit_gamma_vs_fd(std::uint64_t seed, double tol) {
  // d x / d a at fixed CDF level, against a central difference of the quantile.
  SeededStream draw(seed, 0x55);
  double worst = 0.0;
  for (double a : {0.3, 1.0, 2.5, 7.0}) {
    for (int t = 0; t < 5; ++t) {
      const double log_x = sample_log_gamma(a, draw);
      const auto levels = specfun::gamma_levels_at_log(a, log_x);
      const double h = 1e-5 * a;
      const double up = std::exp(specfun::gamma_log_quantile(a + h, levels));
      const double dn = std::exp(specfun::gamma_log_quantile(a - h, levels));
      const double fd = (up - dn) / (2.0 * h);
      const double pathwise = implicit_gamma_grad(std::exp(log_x), a);
      worst = std::max(worst, ad::relative_error(pathwise, fd));
    }
  }
  return at_most("implicit_gamma_grad_fd", worst, tol);
}

inline Suite gradients_suite(const Options& o) {
  Suite s{"gradients", {}};
  for (std::uint64_t k = 0; k < 3; ++k) {
    const auto r = full_model_gradcheck(o.seed + k);
    s.checks.push_back(at_most("full_model_fd[seed+" + std::to_string(k) + "]", r.max_rel_error, 1e-3,
                               std::to_string(r.checked) + " entries, worst param " +
                                   std::to_string(r.worst_param) + "[" + std::to_string(r.worst_index) + "]"));
  }
  s.checks.push_back(implicit_gamma_vs_fd(o.seed, 1e-5));
  return s;
}

// ---------------------------------------------------------------------------
// specfun

inline Suite specfun_suite(const Options&) {
  using namespace specfun;
  constexpr double kEulerGamma = 0.57721566490153286061;
  Suite s{"specfun", {}};
  s.checks.push_back(at_most("log_gamma_half", std::abs(log_gamma(0.5) - 0.5 * std::log(std::numbers::pi)), 1e-15));
  s.checks.push_back(at_most("log_gamma_integers", std::abs(log_gamma(10.0) - std::log(362880.0)), 1e-13));
  s.checks.push_back(at_most("digamma_one", std::abs(digamma(1.0) + kEulerGamma), 1e-15));
  s.checks.push_back(at_most("digamma_half", std::abs(digamma(0.5) + kEulerGamma + 2.0 * std::log(2.0)), 1e-14));
  s.checks.push_back(
      at_most("trigamma_one", std::abs(trigamma(1.0) - std::numbers::pi * std::numbers::pi / 6.0), 1e-14));
  double worst = 0.0;
  for (double x : {0.01, 0.5, 1.0, 3.0, 20.0}) {
    worst = std::max(worst, std::abs(reg_inc_gamma(1.0, x) - (-std::expm1(-x))));
    worst = std::max(worst, std::abs(reg_inc_gamma(0.5, x) - std::erf(std::sqrt(x))));
  }
  s.checks.push_back(at_most("reg_inc_gamma_closed_forms", worst, 1e-14));
  double d_worst = 0.0;
  for (double a : {0.5, 2.0, 9.0}) {
    for (double x : {0.3 * a, a, 2.5 * a}) {
      const double h = 1e-4 * a;
      const double fd = (-reg_inc_gamma(a + 2 * h, x) + 8 * reg_inc_gamma(a + h, x) - 8 * reg_inc_gamma(a - h, x) +
                         reg_inc_gamma(a - 2 * h, x)) /
                        (12 * h);
      d_worst = std::max(d_worst, ad::relative_error(d_reg_inc_gamma_da(a, x), fd));
    }
  }
  s.checks.push_back(at_most("d_reg_inc_gamma_da_fd", d_worst, 1e-7));
  double q_worst = 0.0;
  for (double a : {0.05, 1.0, 30.0}) {
    for (double log_x : {-3.0, 0.0, 1.5}) {
      const double lx = log_x + std::log(a);
      q_worst = std::max(q_worst, std::abs(gamma_log_quantile(a, gamma_levels_at_log(a, lx)) - lx));
    }
  }
  s.checks.push_back(at_most("gamma_quantile_round_trip", q_worst, 1e-9));
  return s;
}

// ---------------------------------------------------------------------------
// samplers

inline Suite samplers_suite(const Options& o) {
  Suite s{"samplers", {}};
  const std::size_t n = std::max<std::size_t>(o.mc_samples / 5, 1000);
  for (double a : {0.1, 1.0, 2.5, 10.0}) {
    SeededStream stream(o.seed, 0x66);
    RunningStats st;
    for (std::size_t i = 0; i < n; ++i) st.add(sample_gamma(a, stream));
    s.checks.push_back(at_most("gamma_mean[a=" + fmt(a) + "]", to_estimate(st).z_score(a), 3.5,
                               "mean " + fmt(st.mean()) + " var " + fmt(st.variance())));
  }
  {
    SeededStream stream(o.seed, 0x77);
    RunningStats st;
    for (std::size_t i = 0; i < n; ++i) st.add(sample_logistic(stream));
    s.checks.push_back(at_most("logistic_mean", to_estimate(st).z_score(0.0), 3.5));
  }
  {
    const std::vector<double> a{0.3, 1.0, 4.0};
    const auto stats = mc_dirichlet(a, n, o.seed + 3, 3, [](const DirichletSample& d, std::vector<double>& v) {
      for (std::size_t i = 0; i < 3; ++i) v[i] = d.theta[i];
    });
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, to_estimate(stats[i]).z_score(a[i] / 5.3));
    s.checks.push_back(at_most("dirichlet_means", worst, 3.5));
  }
  {
    // d/da E[x] = 1 for x ~ Gamma(a, 1).
    SeededStream stream(o.seed, 0x88);
    RunningStats st;
    for (std::size_t i = 0; i < n; ++i) st.add(implicit_gamma_grad(sample_gamma(1.7, stream), 1.7));
    s.checks.push_back(at_most("implicit_grad_of_mean", to_estimate(st).z_score(1.0), 3.5));
  }
  return s;
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"specfun", "samplers", "gradients", "calibration", "objective"};
  return names;
}

inline Suite run_suite(const std::string& name, const Options& o) {
  if (name == "specfun") return specfun_suite(o);
  if (name == "samplers") return samplers_suite(o);
  if (name == "gradients") return gradients_suite(o);
  if (name == "calibration") return calibration_suite(o);
  if (name == "objective") return objective_suite(o);
  throw ConfigError("unknown suite \"" + name + "\"", "suite");
}

}  // namespace dirmoe::verify
