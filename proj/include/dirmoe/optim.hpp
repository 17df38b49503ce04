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
#include <numbers>
#include <vector>

#include "dirmoe/errors.hpp"
#include "dirmoe/params.hpp"

namespace dirmoe {

struct OptimizerConfig {
  double learning_rate = 3e-3;
  double warmup_fraction = 0.01;
  double min_lr_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.995;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("must be positive", "optimizer.learning_rate");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
      throw ConfigError("must lie in [0, 1)", "optimizer.warmup_fraction");
    }
    if (!(min_lr_fraction >= 0.0 && min_lr_fraction <= 1.0)) {
      throw ConfigError("must lie in [0, 1]", "optimizer.min_lr_fraction");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("must lie in [0, 1)", "optimizer.beta1");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("must lie in [0, 1)", "optimizer.beta2");
    if (!(eps > 0.0)) throw ConfigError("must be positive", "optimizer.eps");
    if (!(weight_decay >= 0.0)) throw ConfigError("must be nonnegative", "optimizer.weight_decay");
  }
};

// Linear warmup, then cosine decay to min_lr_fraction * learning_rate.
inline double learning_rate_at(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total) {
  const auto warmup = static_cast<std::int64_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total - warmup));
  const double frac = std::min(1.0, static_cast<double>(step - warmup) / span);
  const double floor = cfg.min_lr_fraction * cfg.learning_rate;
  return floor + 0.5 * (cfg.learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

inline double global_norm(const std::vector<Tensor>& grads) {
  double acc = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data) acc += v * v;
  return std::sqrt(acc);
}

// Adam with decoupled weight decay on the store's decaying tensors.
class AdamW {
 public:
  AdamW(const ParameterStore& store, OptimizerConfig cfg) : cfg_(cfg) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.emplace_back(store.value(i).rows, store.value(i).cols);
      v_.emplace_back(store.value(i).rows, store.value(i).cols);
    }
  }

  // Clips `grads` in place to the configured global norm and applies one
  // update at learning rate `lr`. Returns the pre-clip norm.
  double step(ParameterStore& store, std::vector<Tensor>& grads, double lr) {
    const double norm = global_norm(grads);
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) {
      const double s = cfg_.grad_clip / norm;
      for (Tensor& g : grads)
        for (double& v : g.data) v *= s;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& w = store.value(i).data;
      const auto& g = grads[i].data;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      const double decay = store.decays(i) ? lr * cfg_.weight_decay : 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        w[j] -= decay * w[j];
        w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
      }
    }
    return norm;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

}  // namespace dirmoe
