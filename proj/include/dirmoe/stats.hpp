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
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace dirmoe {

// Streaming mean/variance (Welford) with exact pairwise merge.
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }

  void merge(const RunningStats& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double delta = other.mean_ - mean_;
    const double n = na + nb;
    mean_ += delta * nb / n;
    m2_ += other.m2_ + delta * delta * na * nb / n;
    n_ += other.n_;
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const noexcept {
    return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Runs `shard(index, count)` on `shards` threads and merges the results in
// index order, so the answer does not depend on scheduling.
template <typename Fn>
std::vector<RunningStats> sharded_stats(std::size_t total, std::size_t shards, std::size_t width,
                                        Fn shard) {
  if (shards == 0) shards = 1;
  std::vector<std::vector<RunningStats>> parts(shards);
  std::vector<std::thread> workers;
  const std::size_t base = total / shards;
  for (std::size_t s = 0; s < shards; ++s) {
    const std::size_t count = base + (s < total % shards ? 1 : 0);
    workers.emplace_back([&, s, count] { parts[s] = shard(s, count); });
  }
  for (auto& w : workers) w.join();
  std::vector<RunningStats> merged(width);
  for (const auto& part : parts) {
    for (std::size_t i = 0; i < width && i < part.size(); ++i) merged[i].merge(part[i]);
  }
  return merged;
}

}  // namespace dirmoe
