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

// Temperature and Dirichlet-prior schedules. Every field of a ScheduleState is
// a pure function of the step and the constants, so replaying from t = 0
// reproduces the sequence exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "dirmoe/errors.hpp"

namespace dirmoe {

enum class Decay { kCosine, kExponential };

inline const char* to_string(Decay d) { return d == Decay::kCosine ? "cosine" : "exponential"; }

inline Decay decay_from_string(const std::string& s, const std::string& field) {
  if (s == "cosine") return Decay::kCosine;
  if (s == "exponential") return Decay::kExponential;
  throw ConfigError("expected \"cosine\" or \"exponential\", got \"" + s + "\"", field);
}

struct ScheduleConstants {
  Decay tau_decay = Decay::kCosine;
  double tau0 = 2.0;
  double tau_min = 0.3;
  double rho = 0.999;  // exponential variant only

  double alpha_lo0 = 0.005;
  double alpha_floor = 0.005;
  double gamma = 1.0;
  double ratio = 39.666666666666664;  // alpha_hi / alpha_lo

  Decay lambda_p_decay = Decay::kCosine;
  double lambda_p0 = 0.5;
  double lambda_p_end = 0.3;  // cosine variant only
  double eta = 0.9999;        // exponential variant only

  std::int64_t total_steps = 1;  // horizon for the cosine variants

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("must be positive and finite", name);
    };
    positive(tau0, "schedule.tau0");
    positive(tau_min, "schedule.tau_min");
    positive(rho, "schedule.rho");
    positive(alpha_lo0, "schedule.alpha_lo0");
    positive(alpha_floor, "schedule.alpha_floor");
    positive(gamma, "schedule.gamma");
    positive(ratio, "schedule.ratio");
    positive(lambda_p0, "schedule.lambda_p0");
    positive(lambda_p_end, "schedule.lambda_p_end");
    positive(eta, "schedule.eta");
    if (rho > 1.0) throw ConfigError("must not exceed 1", "schedule.rho");
    if (gamma > 1.0) throw ConfigError("must not exceed 1", "schedule.gamma");
    if (eta > 1.0) throw ConfigError("must not exceed 1", "schedule.eta");
    if (tau_min > tau0) throw ConfigError("must not exceed tau0", "schedule.tau_min");
    if (total_steps < 0) throw ConfigError("must be nonnegative", "schedule.total_steps");
  }
};

struct ScheduleState {
  std::int64_t t = 0;
  double tau = 0.0;
  double alpha_lo = 0.0;
  double alpha_hi = 0.0;
  double lambda_p = 0.0;
  ScheduleConstants constants;
};

// Half-cosine interpolation from `start` at t = 0 to `end` at t >= total.
inline double cosine_anneal(double start, double end, std::int64_t t, std::int64_t total) {
  if (total <= 0) return t <= 0 ? start : end;
  const double frac = std::min(1.0, static_cast<double>(t) / static_cast<double>(total));
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * frac));
}

inline ScheduleState schedule_at(const ScheduleConstants& c, std::int64_t t) {
  ScheduleState s;
  s.t = t;
  s.constants = c;
  const double td = static_cast<double>(t);
  s.tau = c.tau_decay == Decay::kCosine ? std::max(c.tau_min, cosine_anneal(c.tau0, c.tau_min, t, c.total_steps))
                                        : std::max(c.tau_min, c.tau0 * std::pow(c.rho, td));
  s.alpha_lo = std::max(c.alpha_floor, c.alpha_lo0 * std::pow(c.gamma, td));
  s.alpha_hi = c.ratio * s.alpha_lo;
  s.lambda_p = c.lambda_p_decay == Decay::kCosine ? cosine_anneal(c.lambda_p0, c.lambda_p_end, t, c.total_steps)
                                                  : c.lambda_p0 * std::pow(c.eta, td);
  return s;
}

inline ScheduleState step_schedules(const ScheduleState& state) {
  return schedule_at(state.constants, state.t + 1);
}

}  // namespace dirmoe
