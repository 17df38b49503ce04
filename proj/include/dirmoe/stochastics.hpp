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

// Seeded samplers for the Logistic, Gumbel, Gamma, Beta and Dirichlet
// distributions, and pathwise (implicit) derivatives of Gamma and Dirichlet
// draws with respect to their concentrations.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "dirmoe/errors.hpp"
#include "dirmoe/random.hpp"
#include "dirmoe/specfun.hpp"
#include "dirmoe/tensor.hpp"

namespace dirmoe {

// Strictly positive Dirichlet parameters.
using ConcentrationValues = std::vector<double>;

struct DirichletSample {
  std::vector<double> theta;       // on the simplex
  std::vector<double> log_gammas;  // log of the unnormalized Gamma draws
  ConcentrationValues alphas;

  // exp(log_gammas); entries below the smallest normal double are clamped.
  std::vector<double> raw_gammas() const {
    std::vector<double> out(log_gammas.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::max(std::exp(log_gammas[i]), std::numeric_limits<double>::min());
    }
    return out;
  }
  std::size_t size() const noexcept { return theta.size(); }
};

inline double logistic_from_uniform(double u) { return std::log(u) - std::log1p(-u); }

inline double sample_logistic(SeededStream& stream) {
  return logistic_from_uniform(stream.uniform());
}

inline double sample_gumbel(SeededStream& stream) { return -std::log(-std::log(stream.uniform())); }

inline double sample_normal(SeededStream& stream) { return stream.normal(); }

// log of a Gamma(shape, 1) draw. Marsaglia-Tsang squeeze for shape >= 1; for
// shape < 1 the boost G(a) = G(a + 1) U^(1/a), kept in log space because the
// draws underflow for the tiny shapes the schedules produce.
inline double sample_log_gamma(double shape, SeededStream& stream) {
  if (!(shape > 0.0) || !std::isfinite(shape)) {
    throw DomainError("sample_gamma: shape must be positive and finite");
  }
  if (shape < 1.0) {
    const double boosted = sample_log_gamma(shape + 1.0, stream);
    return boosted + std::log(stream.uniform()) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = sample_normal(stream);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = stream.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

// Gamma(shape, 1) draw, clamped below at the smallest normal double.
inline double sample_gamma(double shape, SeededStream& stream) {
  return std::max(std::exp(sample_log_gamma(shape, stream)), std::numeric_limits<double>::min());
}

inline double sample_beta(double a, double b, SeededStream& stream) {
  const double la = sample_log_gamma(a, stream);
  const double lb = sample_log_gamma(b, stream);
  return 1.0 / (1.0 + std::exp(lb - la));
}

namespace detail {

inline void check_alphas(std::span<const double> alphas, const char* fn) {
  if (alphas.empty()) throw DomainError(std::string(fn) + ": empty concentration vector");
  for (double a : alphas) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw DomainError(std::string(fn) + ": concentrations must be positive and finite");
    }
  }
}

inline DirichletSample normalize_log_gammas(std::vector<double> log_gammas,
                                            ConcentrationValues alphas) {
  const double top = *std::max_element(log_gammas.begin(), log_gammas.end());
  double total = 0.0;
  for (double lg : log_gammas) total += std::exp(lg - top);
  const double log_total = top + std::log(total);
  std::vector<double> theta(log_gammas.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] = std::max(std::exp(log_gammas[i] - log_total), std::numeric_limits<double>::min());
  }
  return {std::move(theta), std::move(log_gammas), std::move(alphas)};
}

}  // namespace detail

inline DirichletSample sample_dirichlet(std::span<const double> alphas, SeededStream& stream) {
  detail::check_alphas(alphas, "sample_dirichlet");
  std::vector<double> log_gammas(alphas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) log_gammas[i] = sample_log_gamma(alphas[i], stream);
  return detail::normalize_log_gammas(std::move(log_gammas), {alphas.begin(), alphas.end()});
}

// CDF levels of each raw Gamma draw. Together with the concentrations they
// determine the draw through the quantile map, which is what holding the
// noise fixed means for a reparameterized Gamma.
inline std::vector<specfun::GammaLevels> gamma_levels(const DirichletSample& sample) {
  std::vector<specfun::GammaLevels> out(sample.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = specfun::gamma_levels_at_log(sample.alphas[i], sample.log_gammas[i]);
  }
  return out;
}

// Rebuilds a Dirichlet draw at new concentrations from recorded CDF levels.
inline DirichletSample dirichlet_from_levels(std::span<const double> alphas,
                                             std::span<const specfun::GammaLevels> levels) {
  detail::check_alphas(alphas, "dirichlet_from_levels");
  if (levels.size() != alphas.size()) throw ShapeError("dirichlet_from_levels: size mismatch");
  std::vector<double> log_gammas(alphas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    log_gammas[i] = specfun::gamma_log_quantile(alphas[i], levels[i]);
  }
  return detail::normalize_log_gammas(std::move(log_gammas), {alphas.begin(), alphas.end()});
}

// d log z / d shape at fixed CDF level: -(dP/da) / (z * pdf(z)).
inline double implicit_log_gamma_grad(double log_sample, double shape) {
  const double dp_da = specfun::d_reg_inc_gamma_da_at_log(shape, log_sample);
  return -dp_da * std::exp(-specfun::log_gamma_pdf_times_x(shape, log_sample));
}

// dz / d shape for a Gamma(shape, 1) draw z at fixed CDF level.
inline double implicit_gamma_grad(double sample, double shape) {
  if (!(sample > 0.0) || !std::isfinite(sample)) {
    throw DomainError("implicit_gamma_grad: sample must be positive and finite");
  }
  return sample * implicit_log_gamma_grad(std::log(sample), shape);
}

// J(i, j) = d theta_i / d alpha_j = (delta_ij - theta_i) theta_j d log z_j / d alpha_j.
inline Tensor implicit_dirichlet_jacobian(const DirichletSample& sample) {
  const std::size_t n = sample.size();
  if (sample.log_gammas.size() != n || sample.alphas.size() != n) {
    throw ShapeError("implicit_dirichlet_jacobian: inconsistent sample");
  }
  Tensor jac(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double col = sample.theta[j] * implicit_log_gamma_grad(sample.log_gammas[j], sample.alphas[j]);
    for (std::size_t i = 0; i < n; ++i) {
      jac(i, j) = ((i == j ? 1.0 : 0.0) - sample.theta[i]) * col;
    }
  }
  return jac;
}

}  // namespace dirmoe
