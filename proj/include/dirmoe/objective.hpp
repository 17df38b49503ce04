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

// Variational routing objective: Gaussian decoder reconstruction of the token
// from its route weights, beta-weighted Dirichlet KL against the scheduled
// prior, and the expected-k sparsity penalty.

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dirmoe/divergence.hpp"
#include "dirmoe/errors.hpp"
#include "dirmoe/params.hpp"
#include "dirmoe/router.hpp"
#include "dirmoe/tape.hpp"

namespace dirmoe {

struct ObjectiveConfig {
  double beta_theta = 1e-2;
  double lambda_sparsity = 0.01;
  std::size_t k_target = 1;
  double sigma_sq = 1.0;

  void validate(std::size_t experts) const {
    if (!(beta_theta >= 0.0)) throw ConfigError("must be nonnegative", "objective.beta_theta");
    if (!(lambda_sparsity >= 0.0)) throw ConfigError("must be nonnegative", "objective.lambda_sparsity");
    if (k_target < 1 || k_target > experts) throw ConfigError("must lie in [1, E]", "objective.k_target");
    if (!(sigma_sq > 0.0)) throw ConfigError("must be positive", "objective.sigma_sq");
  }
};

// g(r) = W2 tanh(W1 r + b1) + b2 mapping the simplex to R^d, hidden width 4E.
struct Decoder {
  Linear hidden;
  Linear out;

  static Decoder create(ParameterStore& store, std::size_t experts, std::size_t d, SeededStream& stream) {
    const std::size_t h = 4 * experts;
    Decoder dec;
    dec.hidden = Linear::create(store, "decoder.hidden", h, experts, 1.0 / std::sqrt(double(experts)), 0.0, stream);
    dec.out = Linear::create(store, "decoder.out", d, h, 1.0 / std::sqrt(double(h)), 0.0, stream);
    return dec;
  }

  ad::Var operator()(const ParamVars& p, ad::Var r) const { return out(p, ad::tanh(hidden(p, r))); }
};

// (1 / 2 sigma^2) ||x - x_hat||^2
inline ad::Var reconstruction_loss(ad::Var x, ad::Var x_hat, double sigma_sq) {
  if (!(sigma_sq > 0.0)) throw DomainError("reconstruction_loss: sigma_sq must be positive");
  return ad::scale(ad::sum(ad::square(ad::sub(x, x_hat))), 0.5 / sigma_sq);
}

inline double reconstruction_loss(std::span<const double> x, std::span<const double> x_hat, double sigma_sq) {
  if (x.size() != x_hat.size()) throw ShapeError("reconstruction_loss: length mismatch");
  if (!(sigma_sq > 0.0)) throw DomainError("reconstruction_loss: sigma_sq must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - x_hat[i]) * (x[i] - x_hat[i]);
  return 0.5 * acc / sigma_sq;
}

// lambda (sum z - k)^2
inline ad::Var sparsity_penalty(ad::Var z, double k, double lambda) {
  return ad::scale(ad::square(ad::add_scalar(ad::sum(z), -k)), lambda);
}

inline double sparsity_penalty(std::span<const double> z, double k, double lambda) {
  double s = 0.0;
  for (double v : z) s += v;
  return lambda * (s - k) * (s - k);
}

struct LossNodes {
  ad::Var total;
  ad::Var reconstruction;
  ad::Var kl;
  ad::Var sparsity;
};

// Per-token routing objective. The prior inside `route` already carries
// stop-gradient gates, so the KL reaches the gate logits only through the
// posterior.
inline LossNodes dirmoe_loss(ad::Var x, const RouteNodes& route, const Decoder& decoder,
                             const ParamVars& p, const ObjectiveConfig& cfg) {
  LossNodes out;
  out.reconstruction = reconstruction_loss(x, decoder(p, route.r), cfg.sigma_sq);
  out.kl = ad::dirichlet_kl(route.alpha_q, route.alpha_p);
  out.sparsity = sparsity_penalty(route.gate.z, static_cast<double>(cfg.k_target), cfg.lambda_sparsity);
  out.total = ad::add(ad::add(out.reconstruction, ad::scale(out.kl, cfg.beta_theta)), out.sparsity);
  return out;
}

struct SpikeKlCheck {
  double exact_kl = 0.0;
  double quadratic_lb = 0.0;
};

inline double bernoulli_kl(double p, double q) {
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

// Exact mean-field spike KL sum_i KL(Ber(p_i) || Ber(pi)) and its local
// quadratic lower bound (sum p - k)^2 / (2 E pi (1 - pi)).
inline SpikeKlCheck spike_kl_surrogate_check(std::span<const double> p, double pi, double k) {
  if (!(pi > 0.0 && pi < 1.0)) throw DomainError("spike_kl_surrogate_check: pi must lie in (0, 1)");
  if (p.empty()) throw ShapeError("spike_kl_surrogate_check: empty probability vector");
  SpikeKlCheck out;
  double total = 0.0;
  for (double pi_x : p) {
    if (!(pi_x > 0.0 && pi_x < 1.0)) throw DomainError("spike_kl_surrogate_check: p_i must lie in (0, 1)");
    out.exact_kl += bernoulli_kl(pi_x, pi);
    total += pi_x;
  }
  const double e = static_cast<double>(p.size());
  out.quadratic_lb = (total - k) * (total - k) / (2.0 * e * pi * (1.0 - pi));
  return out;
}

}  // namespace dirmoe
