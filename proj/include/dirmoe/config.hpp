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

// Run configuration as strict JSON. Every field lives at a dotted path such as
// "router.k"; unknown paths and mistyped values are rejected with the path in
// the message.

#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "dirmoe/errors.hpp"
#include "dirmoe/moelab.hpp"

namespace dirmoe {

struct RunConfig {
  TaskConfig task;
  TrainConfig train;
  std::string out_dir = "runs/default";
};

class ConfigFileError : public std::runtime_error {
 public:
  explicit ConfigFileError(const std::string& path)
      : std::runtime_error("cannot read config file: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

namespace config_detail {

using nlohmann::ordered_json;

// Visits each serialized field with its dotted path. Derived fields
// (router.d, router.tau0, objective.k_target, schedule.total_steps) are not
// listed; finalize() sets them.
template <typename Visitor>
void visit_fields(RunConfig& c, Visitor&& v) {
  TaskConfig& t = c.task;
  v("task.d", t.d);
  v("task.clusters", t.clusters);
  v("task.center_scale", t.center_scale);
  v("task.spread", t.spread);
  v("task.map_gain", t.map_gain);
  v("task.noise_std", t.noise_std);
  v("task.n_train", t.n_train);
  v("task.n_eval", t.n_eval);
  v("task.seed", t.seed);

  TrainConfig& tr = c.train;
  v("router.kind", tr.router_kind);
  v("router.experts", tr.router.experts);
  v("router.k", tr.router.k);
  v("router.leak", tr.router.leak);
  v("router.head_floor", tr.router.head_floor);
  v("router.shared_heads", tr.router.shared_heads);
  v("router.init_alpha_hi", tr.router.init_alpha_hi);
  v("router.init_alpha_lo", tr.router.init_alpha_lo);
  v("router.init_std", tr.router.init_std);
  v("router.z_threshold", tr.router.z_threshold);
  v("router.lambda_q", tr.lambda_q);

  v("objective.beta_theta", tr.objective.beta_theta);
  v("objective.lambda_sparsity", tr.objective.lambda_sparsity);
  v("objective.sigma_sq", tr.objective.sigma_sq);

  ScheduleConstants& s = tr.schedule;
  v("schedule.tau_decay", s.tau_decay);
  v("schedule.tau0", s.tau0);
  v("schedule.tau_min", s.tau_min);
  v("schedule.rho", s.rho);
  v("schedule.alpha_lo0", s.alpha_lo0);
  v("schedule.alpha_floor", s.alpha_floor);
  v("schedule.gamma", s.gamma);
  v("schedule.ratio", s.ratio);
  v("schedule.lambda_p_decay", s.lambda_p_decay);
  v("schedule.lambda_p0", s.lambda_p0);
  v("schedule.lambda_p_end", s.lambda_p_end);
  v("schedule.eta", s.eta);

  OptimizerConfig& o = tr.optimizer;
  v("optimizer.learning_rate", o.learning_rate);
  v("optimizer.warmup_fraction", o.warmup_fraction);
  v("optimizer.min_lr_fraction", o.min_lr_fraction);
  v("optimizer.beta1", o.beta1);
  v("optimizer.beta2", o.beta2);
  v("optimizer.eps", o.eps);
  v("optimizer.weight_decay", o.weight_decay);
  v("optimizer.grad_clip", o.grad_clip);

  v("train.steps", tr.steps);
  v("train.batch", tr.batch);
  v("train.log_every", tr.log_every);
  v("train.seed", tr.seed);
  v("train.balance_loss", tr.balance_loss);

  v("output.dir", c.out_dir);
}

inline ordered_json::json_pointer pointer(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (char& ch : p) if (ch == '.') ch = '/';
  return ordered_json::json_pointer(p);
}

struct Writer {
  ordered_json& j;
  template <typename T>
  void operator()(const char* path, const T& value) {
    if constexpr (std::is_same_v<T, Decay> || std::is_same_v<T, RouterKind>) {
      j[pointer(path)] = to_string(value);
    } else {
      j[pointer(path)] = value;
    }
  }
};

struct Reader {
  const ordered_json& j;
  template <typename T>
  void operator()(const char* path, T& value) {
    const auto ptr = pointer(path);
    if (!j.contains(ptr)) return;
    const ordered_json& node = j.at(ptr);
    if constexpr (std::is_same_v<T, Decay>) {
      if (!node.is_string()) throw ConfigError("expected a string", path);
      value = decay_from_string(node.get<std::string>(), path);
    } else if constexpr (std::is_same_v<T, RouterKind>) {
      if (!node.is_string()) throw ConfigError("expected a string", path);
      try {
        value = router_kind_from_string(node.get<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(e.what(), path);
      }
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!node.is_boolean()) throw ConfigError("expected true or false", path);
      value = node.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node.is_string()) throw ConfigError("expected a string", path);
      value = node.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!node.is_number_unsigned()) throw ConfigError("expected a nonnegative integer", path);
      value = node.get<T>();
    } else {
      if (!node.is_number()) throw ConfigError("expected a number", path);
      value = node.get<double>();
    }
  }
};

inline std::set<std::string> known_paths() {
  std::set<std::string> out;
  RunConfig scratch;
  visit_fields(scratch, [&](const char* path, auto&) { out.insert(path); });
  return out;
}

inline void reject_unknown(const ordered_json& j, const std::string& prefix, const std::set<std::string>& known) {
  if (!j.is_object()) {
    throw ConfigError("expected an object", prefix.empty() ? "<root>" : prefix);
  }
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (known.count(path)) continue;
    const bool is_section = std::any_of(known.begin(), known.end(),
                                        [&](const std::string& k) { return k.rfind(path + ".", 0) == 0; });
    if (!is_section) throw ConfigError("unknown key", path);
    reject_unknown(value, path, known);
  }
}

}  // namespace config_detail

// Copies shared values into the places that consume them.
inline void finalize(RunConfig& c) {
  c.train.router.d = c.task.d;
  c.train.router.tau0 = c.train.schedule.tau0;
  c.train.objective.k_target = c.train.router.k;
  c.train.schedule.total_steps = static_cast<std::int64_t>(c.train.steps);
}

inline void validate(const RunConfig& c) {
  c.task.validate();
  c.train.validate();
  if (c.out_dir.empty()) throw ConfigError("must not be empty", "output.dir");
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  RunConfig copy = c;
  config_detail::visit_fields(copy, config_detail::Writer{j});
  return j;
}

// Missing keys keep their defaults.
inline RunConfig from_json(const nlohmann::ordered_json& j) {
  config_detail::reject_unknown(j, "", config_detail::known_paths());
  RunConfig c;
  config_detail::visit_fields(c, config_detail::Reader{j});
  finalize(c);
  validate(c);
  return c;
}

inline nlohmann::ordered_json parse_config_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::ordered_json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(e.what()), source);
  }
}

inline nlohmann::ordered_json read_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigFileError(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

// "path=value"; the value is read as JSON when it parses, else as a string.
inline void apply_override(nlohmann::ordered_json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value", assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  if (!config_detail::known_paths().count(path)) throw ConfigError("unknown key", path);
  nlohmann::ordered_json value = nlohmann::ordered_json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  j[config_detail::pointer(path)] = std::move(value);
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  auto j = read_config_json(path);
  for (const auto& o : overrides) apply_override(j, o);
  return from_json(j);
}

}  // namespace dirmoe
