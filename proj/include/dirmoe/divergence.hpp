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

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dirmoe/errors.hpp"
#include "dirmoe/specfun.hpp"

namespace dirmoe {

// Gradients of the closed-form divergence with respect to both arguments.
struct DirichletKlGradient {
  std::vector<double> d_q;
  std::vector<double> d_p;
};

namespace detail {

inline void check_kl_args(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size() || q.empty()) throw ShapeError("dirichlet_kl: size mismatch");
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q[i] > 0.0) || !(p[i] > 0.0) || !std::isfinite(q[i]) || !std::isfinite(p[i])) {
      throw DomainError("dirichlet_kl: concentrations must be positive and finite");
    }
  }
}

}  // namespace detail

// KL(Dir(q) || Dir(p)) =
//   lnG(q0) - sum lnG(q_i) - lnG(p0) + sum lnG(p_i) + sum (q_i - p_i)(psi(q_i) - psi(q0)).
inline double dirichlet_kl(std::span<const double> q, std::span<const double> p) {
  detail::check_kl_args(q, p);
  double q0 = 0.0, p0 = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q0 += q[i];
    p0 += p[i];
  }
  const double psi_q0 = specfun::digamma(q0);
  double kl = specfun::log_gamma(q0) - specfun::log_gamma(p0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    kl += specfun::log_gamma(p[i]) - specfun::log_gamma(q[i]) +
          (q[i] - p[i]) * (specfun::digamma(q[i]) - psi_q0);
  }
  return std::max(kl, 0.0);
}

inline DirichletKlGradient dirichlet_kl_gradient(std::span<const double> q,
                                                 std::span<const double> p) {
  detail::check_kl_args(q, p);
  double q0 = 0.0, p0 = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q0 += q[i];
    p0 += p[i];
    diff += q[i] - p[i];
  }
  const double psi_q0 = specfun::digamma(q0);
  const double psi_p0 = specfun::digamma(p0);
  const double tri_q0 = specfun::trigamma(q0);
  DirichletKlGradient g{std::vector<double>(q.size()), std::vector<double>(q.size())};
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double psi_qi = specfun::digamma(q[i]);
    g.d_q[i] = (q[i] - p[i]) * specfun::trigamma(q[i]) - tri_q0 * diff;
    g.d_p[i] = specfun::digamma(p[i]) - psi_p0 - (psi_qi - psi_q0);
  }
  return g;
}

}  // namespace dirmoe
