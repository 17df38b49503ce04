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
#include <string>
#include <utility>
#include <vector>

#include "dirmoe/random.hpp"
#include "dirmoe/stochastics.hpp"
#include "dirmoe/tape.hpp"
#include "dirmoe/tensor.hpp"

namespace dirmoe {

// Flat, ordered collection of named trainable tensors. Modules hold indices
// into the store; binding the store to a tape yields one leaf per tensor.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value, bool decay) {
    entries_.push_back({std::move(name), std::move(value), decay});
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  bool decays(std::size_t i) const { return entries_[i].decay; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    if (values.size() != entries_.size()) throw ShapeError("ParameterStore::restore: count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) entries_[i].value = values[i];
  }

  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad = true) const {
    std::vector<ad::Var> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(tape.leaf(e.value, requires_grad));
    return out;
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    bool decay;
  };
  std::vector<Entry> entries_;
};

using ParamVars = std::vector<ad::Var>;

inline Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, SeededStream& stream) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = stddev * sample_normal(stream);
  return t;
}

// y = W x + b with W (out x in).
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t out,
                       std::size_t in, double init_std, double bias_fill, SeededStream& stream) {
    Linear l;
    l.weight = store.add(name + ".w", normal_tensor(out, in, init_std, stream), true);
    l.bias = store.add(name + ".b", Tensor(out, 1, bias_fill), false);
    return l;
  }

  ad::Var operator()(const ParamVars& p, ad::Var x) const {
    return ad::affine(p[weight], x, p[bias]);
  }
};

}  // namespace dirmoe
