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

// Sparsity calibration: closed forms tying the Dirichlet concentration scale
// to the expected Simpson index and to the Beta law of the active-set mass,
// plus Monte Carlo estimators used to confirm them.

#pragma once

#include <cmath>
#include <algorithm>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dirmoe/divergence.hpp"
#include "dirmoe/errors.hpp"
#include "dirmoe/random.hpp"
#include "dirmoe/stats.hpp"
#include "dirmoe/stochastics.hpp"

namespace dirmoe {

inline double simpson_index(std::span<const double> p) {
  if (p.empty()) throw DomainError("simpson_index: empty vector");
  double total = 0.0, h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw DomainError("simpson_index: negative probability");
    total += v;
    h += v * v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("simpson_index: input is not on the simplex");
  return h;
}

// E[sum theta_i^2] for theta ~ Dir(lambda * beta): (lambda S2 / B + 1) / (lambda B + 1).
inline double expected_simpson(double lambda, std::span<const double> betas) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("expected_simpson: lambda must be positive");
  if (betas.empty()) throw DomainError("expected_simpson: empty base");
  double b = 0.0, s2 = 0.0;
  for (double beta : betas) {
    if (!(beta > 0.0)) throw DomainError("expected_simpson: base entries must be positive");
    b += beta;
    s2 += beta * beta;
  }
  return (lambda * s2 / b + 1.0) / (lambda * b + 1.0);
}

// Inverse of expected_simpson on the all-ones base.
inline double lambda_from_simpson(double h, std::size_t experts) {
  if (experts < 2) throw DomainError("lambda_from_simpson: need at least two experts");
  const double e = static_cast<double>(experts);
  if (!(h > 1.0 / e && h < 1.0)) throw DomainError("lambda_from_simpson: target must lie in (1/E, 1)");
  return (1.0 - h) / (h * e - 1.0);
}

// alpha_hi / alpha_lo giving mean mass m on k active experts out of E.
inline double ratio_from_mass(double m, std::size_t experts, std::size_t k) {
  if (!(m > 0.0 && m < 1.0)) throw DomainError("ratio_from_mass: mass must lie in (0, 1)");
  if (k < 1 || k >= experts) throw DomainError("ratio_from_mass: need 1 <= k < E");
  const double e = static_cast<double>(experts), kk = static_cast<double>(k);
  return m / (1.0 - m) * (e - kk) / kk;
}

inline double mass_mean(double alpha_hi, double alpha_lo, std::size_t experts, std::size_t k) {
  if (!(alpha_hi > 0.0 && alpha_lo > 0.0)) throw DomainError("mass_mean: concentrations must be positive");
  if (k < 1 || k >= experts) throw DomainError("mass_mean: need 1 <= k < E");
  const double a = static_cast<double>(k) * alpha_hi;
  return a / (a + static_cast<double>(experts - k) * alpha_lo);
}

// Total mass T on k active experts: T ~ Beta(k lambda alpha_hi, (E - k) lambda alpha_lo).
struct MassLaw {
  double beta_a = 0.0;
  double beta_b = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

inline MassLaw mass_law(double alpha_hi, double alpha_lo, double lambda, std::size_t experts, std::size_t k) {
  if (!(lambda > 0.0)) throw DomainError("mass_law: lambda must be positive");
  MassLaw law;
  law.mean = mass_mean(alpha_hi, alpha_lo, experts, k);
  law.beta_a = static_cast<double>(k) * lambda * alpha_hi;
  law.beta_b = static_cast<double>(experts - k) * lambda * alpha_lo;
  law.variance = law.mean * (1.0 - law.mean) / (law.beta_a + law.beta_b + 1.0);
  return law;
}

// lambda with Var(T) = v_tar for s active experts. m must already be the mean
// implied by (alpha_hi, alpha_lo, s, E); a mismatch is rejected, not repaired.
inline double lambda_from_variance(double m, double v_tar, std::size_t s, std::size_t experts,
                                   double alpha_hi, double alpha_lo) {
  const double implied = mass_mean(alpha_hi, alpha_lo, experts, s);
  if (std::abs(implied - m) > 1e-9) {
    throw ConsistencyError("lambda_from_variance: m = " + std::to_string(m) +
                           " but the concentrations imply m = " + std::to_string(implied));
  }
  if (!(v_tar > 0.0 && v_tar < m * (1.0 - m))) {
    throw DomainError("lambda_from_variance: v_tar must lie in (0, m(1 - m))");
  }
  const double c = static_cast<double>(s) * alpha_hi + static_cast<double>(experts - s) * alpha_lo;
  return (m * (1.0 - m) / v_tar - 1.0) / c;
}

// Var(theta_i) = a_i (a0 - a_i) / (a0^2 (a0 + 1)).
inline std::vector<double> dirichlet_marginal_variance(std::span<const double> alphas) {
  detail::check_alphas(alphas, "dirichlet_marginal_variance");
  double a0 = 0.0;
  for (double a : alphas) a0 += a;
  std::vector<double> out(alphas.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alphas[i] * (a0 - alphas[i]) / (a0 * a0 * (a0 + 1.0));
  return out;
}

// --- Monte Carlo -----------------------------------------------------------------

// Draws are split over a fixed number of shards with their own streams, so the
// estimate does not depend on the number of cores.
inline constexpr std::size_t kMcShards = 4;

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;

  // |value - mean| in standard errors.
  double z_score(double value) const {
    return std_error > 0.0 ? std::abs(value - mean) / std_error : (value == mean ? 0.0 : INFINITY);
  }
};

inline McEstimate to_estimate(const RunningStats& s) { return {s.mean(), s.std_error(), s.count()}; }

// Mean of f(theta) over theta ~ Dir(alphas), for several statistics at once.
template <typename Fn>
std::vector<RunningStats> mc_dirichlet(std::span<const double> alphas, std::size_t samples, std::uint64_t seed,
                                       std::size_t width, Fn statistic) {
  detail::check_alphas(alphas, "mc_dirichlet");
  const std::vector<double> a(alphas.begin(), alphas.end());
  return sharded_stats(samples, kMcShards, width, [&](std::size_t shard, std::size_t count) {
    SeededStream stream(seed, shard);
    std::vector<RunningStats> out(width);
    std::vector<double> values(width);
    for (std::size_t n = 0; n < count; ++n) {
      const DirichletSample draw = sample_dirichlet(a, stream);
      statistic(draw, values);
      for (std::size_t i = 0; i < width; ++i) out[i].add(values[i]);
    }
    return out;
  });
}

inline McEstimate mc_expected_simpson(double lambda, std::span<const double> betas, std::size_t samples,
                                      std::uint64_t seed) {
  std::vector<double> alphas(betas.begin(), betas.end());
  for (double& a : alphas) a *= lambda;
  const auto stats = mc_dirichlet(alphas, samples, seed, 1, [](const DirichletSample& d, std::vector<double>& v) {
    double h = 0.0;
    for (double t : d.theta) h += t * t;
    v[0] = h;
  });
  return to_estimate(stats[0]);
}

// Variance estimated as the average of per-batch sample variances, so its
// standard error comes from the spread across batches.
struct McMoments {
  McEstimate mean;
  McEstimate variance;
};

inline McMoments batch_moments(const std::vector<RunningStats>& batches) {
  RunningStats variances, pooled;
  for (const auto& b : batches) {
    variances.add(b.variance());
    pooled.merge(b);
  }
  return {to_estimate(pooled), to_estimate(variances)};
}

// Moments of coordinate statistic `pick(theta)` over Dir(alphas), batched.
template <typename Pick>
McMoments mc_moments(std::span<const double> alphas, std::size_t samples, std::uint64_t seed, Pick pick,
                     std::size_t batch = 10000) {
  detail::check_alphas(alphas, "mc_moments");
  const std::vector<double> a(alphas.begin(), alphas.end());
  const std::size_t n_batches = std::max<std::size_t>(2, samples / batch);
  std::vector<RunningStats> batches(n_batches);
  // Each batch owns a stream, so the result does not depend on the threads.
  std::vector<std::thread> workers;
  for (std::size_t s = 0; s < kMcShards; ++s) {
    workers.emplace_back([&, s] {
      for (std::size_t b = s; b < n_batches; b += kMcShards) {
        SeededStream stream(seed, b);
        for (std::size_t n = 0; n < batch; ++n) batches[b].add(pick(sample_dirichlet(a, stream)));
      }
    });
  }
  for (auto& w : workers) w.join();
  return batch_moments(batches);
}

// Active-set mass T = theta_1 + ... + theta_k under Dir(lambda alpha_hi (k times), lambda alpha_lo (E - k times)).
inline McMoments mc_mass(double alpha_hi, double alpha_lo, double lambda, std::size_t experts, std::size_t k,
                         std::size_t samples, std::uint64_t seed) {
  std::vector<double> alphas(experts, lambda * alpha_lo);
  for (std::size_t i = 0; i < k; ++i) alphas[i] = lambda * alpha_hi;
  return mc_moments(alphas, samples, seed, [k](const DirichletSample& d) {
    double t = 0.0;
    for (std::size_t i = 0; i < k; ++i) t += d.theta[i];
    return t;
  });
}

inline McMoments mc_marginal(std::span<const double> alphas, std::size_t index, std::size_t samples,
                             std::uint64_t seed) {
  if (index >= alphas.size()) throw ShapeError("mc_marginal: index out of range");
  return mc_moments(alphas, samples, seed, [index](const DirichletSample& d) { return d.theta[index]; });
}

// E_q[log q(theta) - log p(theta)] for Dirichlet q, p.
inline McEstimate mc_dirichlet_kl(std::span<const double> q, std::span<const double> p, std::size_t samples,
                                  std::uint64_t seed) {
  detail::check_kl_args(q, p);
  auto log_norm = [](std::span<const double> a) {
    double a0 = 0.0, acc = 0.0;
    for (double v : a) {
      a0 += v;
      acc -= specfun::log_gamma(v);
    }
    return acc + specfun::log_gamma(a0);
  };
  const double cq = log_norm(q), cp = log_norm(p);
  const std::vector<double> pv(p.begin(), p.end());
  const auto stats = mc_dirichlet(q, samples, seed, 1, [&](const DirichletSample& d, std::vector<double>& v) {
    // log theta_i from the log Gammas keeps tiny coordinates finite.
    double lse = -INFINITY;
    for (double lg : d.log_gammas) lse = std::max(lse, lg);
    double s = 0.0;
    for (double lg : d.log_gammas) s += std::exp(lg - lse);
    const double log_total = lse + std::log(s);
    double acc = cq - cp;
    for (std::size_t i = 0; i < pv.size(); ++i) acc += (d.alphas[i] - pv[i]) * (d.log_gammas[i] - log_total);
    v[0] = acc;
  });
  return to_estimate(stats[0]);
}

// --- monotone sparsity -------------------------------------------------------------

struct MonotonePoint {
  double lambda = 0.0;
  double closed_form = 0.0;
  double rational_form = 0.0;  // (a lambda + 1) / (b lambda + 1), a = S2 / B, b = B
  McEstimate mc;
};

struct MonotoneReport {
  std::vector<MonotonePoint> points;
  double a = 0.0;
  double b = 0.0;
  bool strictly_decreasing = true;
  bool rational_form_matches = true;
  bool slope_negative = true;  // a - b < 0
  bool mc_consistent = true;   // MC never increases by more than 3 sigma, and each point within 3 sigma
  double limit_low = 1.0;      // lambda -> 0
  double limit_high = 0.0;     // lambda -> infinity: sum m_i^2
};

inline MonotoneReport verify_monotone_sparsity(std::span<const double> betas, std::span<const double> lambda_grid,
                                               std::size_t mc_samples, std::uint64_t seed) {
  if (betas.size() < 2) throw DomainError("verify_monotone_sparsity: need at least two experts");
  for (std::size_t i = 1; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > lambda_grid[i - 1])) throw DomainError("verify_monotone_sparsity: grid must increase");
  }
  MonotoneReport rep;
  double s2 = 0.0;
  for (double beta : betas) {
    rep.b += beta;
    s2 += beta * beta;
  }
  rep.a = s2 / rep.b;
  rep.limit_high = s2 / (rep.b * rep.b);
  rep.slope_negative = rep.a - rep.b < 0.0;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    MonotonePoint pt;
    pt.lambda = lambda_grid[i];
    pt.closed_form = expected_simpson(pt.lambda, betas);
    pt.rational_form = (rep.a * pt.lambda + 1.0) / (rep.b * pt.lambda + 1.0);
    if (mc_samples > 0) {
      pt.mc = mc_expected_simpson(pt.lambda, betas, mc_samples, seed + i);
      if (pt.mc.z_score(pt.closed_form) > 3.0) rep.mc_consistent = false;
    }
    if (std::abs(pt.rational_form - pt.closed_form) > 1e-12) rep.rational_form_matches = false;
    if (!rep.points.empty()) {
      const MonotonePoint& prev = rep.points.back();
      if (!(pt.closed_form < prev.closed_form)) rep.strictly_decreasing = false;
      if (mc_samples > 0) {
        const double se = std::hypot(pt.mc.std_error, prev.mc.std_error);
        if (pt.mc.mean - prev.mc.mean > 3.0 * se) rep.mc_consistent = false;
      }
    }
    rep.points.push_back(pt);
  }
  return rep;
}

}  // namespace dirmoe
