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

// Central finite-difference check of tape gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dirmoe/tape.hpp"

namespace dirmoe::ad {

// Builds a scalar loss from leaves created for the given parameters. Any
// randomness must be fixed inside the callable so repeated calls agree.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double evaluate_loss(const GraphFn& fn, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  return fn(tape, leaves).scalar();
}

inline std::vector<Tensor> analytic_gradients(const GraphFn& fn, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  tape.backward(fn(tape, leaves));
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& l : leaves) out.push_back(l.grad());
  return out;
}

// Compares every parameter entry (or every `stride`-th one) against the
// five-point central difference
//   (-L(p + 2h) + 8 L(p + h) - 8 L(p - h) + L(p - 2h)) / 12h
// with h scaled to the entry magnitude. Its O(h^4) truncation error allows a
// step large enough that round-off in the double-precision loss stays small.
inline GradCheckResult gradcheck(const GraphFn& fn, std::vector<Tensor> params,
                                 double step = 1e-4, std::size_t stride = 1) {
  const auto grads = analytic_gradients(fn, params);
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); i += stride) {
      double& x = params[p].data[i];
      const double saved = x;
      const double h = step * std::max(1.0, std::abs(saved));
      auto at = [&](double offset) {
        x = saved + offset;
        return static_cast<long double>(evaluate_loss(fn, params));
      };
      const long double diff = 8.0L * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h));
      x = saved;
      const double numeric = static_cast<double>(diff / (12.0L * h));
      const double analytic = grads[p].data[i];
      const double err = relative_error(analytic, numeric);
      ++result.checked;
      if (err >= result.max_rel_error) {
        result = {err, p, i, analytic, numeric, result.checked};
      }
    }
  }
  return result;
}

}  // namespace dirmoe::ad
