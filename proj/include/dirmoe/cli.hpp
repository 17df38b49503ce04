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

// Command implementations behind the dirmoe executable. Each returns a process
// exit status and writes human-readable progress to `out`, errors to `err`.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dirmoe/calibration.hpp"
#include "dirmoe/config.hpp"
#include "dirmoe/moelab.hpp"
#include "dirmoe/stochastics.hpp"
#include "dirmoe/verify.hpp"

namespace dirmoe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // run completed but a check failed, or training diverged
inline constexpr int kExitUsage = 2;    // unreadable or invalid input

using nlohmann::ordered_json;

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// ---------------------------------------------------------------------------
// train

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{
      "step",      "total_loss",  "task_loss",     "reconstruction", "kl",        "sparsity_penalty",
      "mean_active", "mean_active_count", "max_active", "simpson_r", "simpson_theta", "grad_norm",
      "tau",       "lambda_p",    "learning_rate"};
  return cols;
}

inline std::string csv_header(std::size_t experts) {
  std::string line;
  for (const auto& c : metric_columns()) line += (line.empty() ? "" : ",") + c;
  for (std::size_t i = 0; i < experts; ++i) line += ",load_" + std::to_string(i);
  return line + "\n";
}

inline std::string csv_row(const StepMetrics& m) {
  std::string line = std::to_string(m.step);
  for (double v : {m.total_loss, m.task_loss, m.reconstruction, m.kl, m.sparsity_penalty, m.mean_active,
                   m.mean_active_count, m.max_active, m.simpson_r, m.simpson_theta, m.grad_norm, m.tau, m.lambda_p,
                   m.learning_rate}) {
    line += "," + g17(v);
  }
  for (double v : m.load) line += "," + g17(v);
  return line + "\n";
}

inline ordered_json metrics_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"total_loss", m.total_loss},
          {"task_loss", m.task_loss},
          {"reconstruction", m.reconstruction},
          {"kl", m.kl},
          {"sparsity_penalty", m.sparsity_penalty},
          {"mean_active", m.mean_active},
          {"mean_active_count", m.mean_active_count},
          {"max_active", m.max_active},
          {"simpson_r", m.simpson_r},
          {"simpson_theta", m.simpson_theta},
          {"grad_norm", m.grad_norm},
          {"tau", m.tau},
          {"lambda_p", m.lambda_p},
          {"learning_rate", m.learning_rate},
          {"load", m.load},
          {"usage", m.usage}};
}

inline ordered_json summary_json(const RunConfig& cfg, const TrainResult& r) {
  const auto& e = r.eval;
  return {{"schema_version", 1},
          {"router_kind", to_string(cfg.train.router_kind)},
          {"experts", cfg.train.router.experts},
          {"k", cfg.train.router.k},
          {"steps", cfg.train.steps},
          {"seed", cfg.train.seed},
          {"finite_gradients", r.finite_gradients},
          {"max_grad_norm", r.max_grad_norm},
          {"final", metrics_json(r.history.back())},
          {"eval",
           {{"task_loss", e.task_loss},
            {"mean_active", e.mean_active},
            {"mean_active_count", e.mean_active_count},
            {"max_active", e.max_active},
            {"simpson_r", e.simpson_r},
            {"load", e.load},
            {"specialization",
             {{"score", e.specialization.score},
              {"count_score", e.specialization.count_score},
              {"route_mass", e.specialization.route_mass},
              {"counts", e.specialization.counts}}}}},
          {"files", {{"metrics", "metrics.csv"}, {"config", "config.json"}}}};
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

inline std::optional<RunConfig> resolve_config(const TrainArgs& a, std::ostream& err) {
  try {
    auto j = read_config_json(a.config_path);
    for (const auto& o : a.overrides) apply_override(j, o);
    if (a.seed) j["train"]["seed"] = *a.seed;
    if (a.out_dir) j["output"]["dir"] = *a.out_dir;
    return from_json(j);
  } catch (const ConfigFileError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ConfigError& e) {
    err << "error: invalid config " << a.config_path << ": " << e.what() << "\n";
  }
  return std::nullopt;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(args, err);
  if (!cfg) return kExitUsage;
  const std::filesystem::path dir(cfg->out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", to_json(*cfg).dump(2) + "\n");

  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  csv << csv_header(cfg->train.router.experts);
  const SyntheticTask task = generate_task(cfg->task);
  try {
    const TrainResult result = train(cfg->train, task, [&](const StepMetrics& m) {
      csv << csv_row(m);
      out << "step " << m.step << " loss " << g17(m.total_loss) << " task " << g17(m.task_loss) << " active "
          << g17(m.mean_active) << "\n";
    });
    csv.close();
    write_text(dir / "summary.json", summary_json(*cfg, result).dump(2) + "\n");
    out << "eval task_loss " << g17(result.eval.task_loss) << " mean_active " << g17(result.eval.mean_active)
        << " specialization " << g17(result.eval.specialization.score) << "\n"
        << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "summary.json").string() << "\n";
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string mode = "simpson";  // simpson | variance | sweep
  std::size_t experts = 8;
  std::size_t active = 1;  // s (or k)
  double h = 0.5;
  double m = 0.85;
  double v_tar = 0.01;
  double alpha_lo = 1.0;
  std::vector<double> sweep_m{0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  std::size_t mc_samples = 0;  // 0 skips the Monte Carlo confirmation
  std::uint64_t seed = 1;
  std::string out_dir = ".";
};

inline ordered_json estimate_json(const McEstimate& e, double closed) {
  return {{"mean", e.mean}, {"std_error", e.std_error}, {"samples", e.samples}, {"z_score", e.z_score(closed)}};
}

inline ordered_json calibrate_simpson(const CalibrateArgs& a) {
  const double lambda = lambda_from_simpson(a.h, a.experts);
  const std::vector<double> ones(a.experts, 1.0);
  const double eh = expected_simpson(lambda, ones);
  ordered_json r{{"mode", "simpson"}, {"experts", a.experts}, {"h", a.h}, {"lambda", lambda},
                 {"expected_simpson", eh}};
  if (a.mc_samples > 0) r["mc_expected_simpson"] = estimate_json(mc_expected_simpson(lambda, ones, a.mc_samples, a.seed), eh);
  return r;
}

inline ordered_json variance_row(const CalibrateArgs& a, double m) {
  const double ratio = ratio_from_mass(m, a.experts, a.active);
  const double hi = ratio * a.alpha_lo;
  const double lambda = lambda_from_variance(m, a.v_tar, a.active, a.experts, hi, a.alpha_lo);
  const MassLaw law = mass_law(hi, a.alpha_lo, lambda, a.experts, a.active);
  return {{"m", m},           {"ratio", ratio},         {"alpha_hi", hi},          {"alpha_lo", a.alpha_lo},
          {"lambda", lambda}, {"beta_a", law.beta_a},   {"beta_b", law.beta_b},    {"mass_mean", law.mean},
          {"mass_variance", law.variance}};
}

inline ordered_json calibrate_variance(const CalibrateArgs& a) {
  ordered_json r{{"mode", "variance"}, {"experts", a.experts}, {"active", a.active}, {"v_tar", a.v_tar}};
  r.update(variance_row(a, a.m));
  if (a.mc_samples > 0) {
    const auto mc = mc_mass(r["alpha_hi"].get<double>(), a.alpha_lo, r["lambda"].get<double>(), a.experts,
                            a.active, a.mc_samples, a.seed);
    r["mc_mass_mean"] = estimate_json(mc.mean, a.m);
    r["mc_mass_variance"] = estimate_json(mc.variance, a.v_tar);
  }
  return r;
}

inline ordered_json calibrate_sweep(const CalibrateArgs& a) {
  ordered_json rows = ordered_json::array();
  for (double m : a.sweep_m) rows.push_back(variance_row(a, m));
  // Walking m downward, lambda should rise to hold Var(T) fixed.
  bool rises = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double dm = rows[i]["m"].get<double>() - rows[i - 1]["m"].get<double>();
    const double dl = rows[i]["lambda"].get<double>() - rows[i - 1]["lambda"].get<double>();
    if (!(dm * dl < 0.0)) rises = false;
  }
  return {{"mode", "sweep"}, {"experts", a.experts}, {"active", a.active}, {"v_tar", a.v_tar},
          {"alpha_lo", a.alpha_lo}, {"rows", rows}, {"lambda_increases_as_m_decreases", rises}};
}

inline int cmd_calibrate(const CalibrateArgs& a, std::ostream& out, std::ostream& err) {
  ordered_json report;
  try {
    if (a.mode == "simpson") {
      report = calibrate_simpson(a);
    } else if (a.mode == "variance") {
      report = calibrate_variance(a);
    } else if (a.mode == "sweep") {
      report = calibrate_sweep(a);
    } else {
      err << "error: unknown calibration mode \"" << a.mode << "\" (expected simpson, variance or sweep)\n";
      return kExitUsage;
    }
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConsistencyError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::filesystem::create_directories(a.out_dir);
  const auto path = std::filesystem::path(a.out_dir) / "calibration_report.json";
  write_text(path, report.dump(2) + "\n");
  out << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = verify::Options{}.seed;
  std::size_t mc_samples = verify::Options{}.mc_samples;
  std::string out_dir = ".";
};

inline int cmd_verify(const VerifyArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::string> names;
  if (a.suite == "all") {
    names = verify::suite_names();
  } else if (std::find(verify::suite_names().begin(), verify::suite_names().end(), a.suite) !=
             verify::suite_names().end()) {
    names = {a.suite};
  } else {
    err << "error: unknown suite \"" << a.suite << "\"\n";
    return kExitUsage;
  }
  const verify::Options opts{a.seed, a.mc_samples};
  ordered_json report{{"seed", a.seed}, {"mc_samples", a.mc_samples}, {"suites", ordered_json::array()}};
  bool all_passed = true;
  for (const auto& name : names) {
    const verify::Suite s = verify::run_suite(name, opts);
    ordered_json checks = ordered_json::array();
    for (const auto& c : s.checks) {
      out << (c.passed ? "PASS " : "FAIL ") << name << "/" << c.name << " value=" << g17(c.value)
          << " tolerance=" << g17(c.tolerance) << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
      checks.push_back({{"name", c.name},
                        {"passed", c.passed},
                        {"value", std::isfinite(c.value) ? ordered_json(c.value) : ordered_json(nullptr)},
                        {"tolerance", c.tolerance},
                        {"detail", c.detail}});
    }
    all_passed = all_passed && s.passed();
    report["suites"].push_back({{"name", name}, {"passed", s.passed()}, {"checks", checks}});
  }
  report["passed"] = all_passed;
  std::filesystem::create_directories(a.out_dir);
  write_text(std::filesystem::path(a.out_dir) / "verify_report.json", report.dump(2) + "\n");
  out << (all_passed ? "all checks passed" : "some checks FAILED") << "\n";
  return all_passed ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
  std::string kind = "dirichlet";  // dirichlet | gate
  std::vector<double> alphas{1.0, 1.0, 1.0};
  std::vector<double> logits{0.0, 0.0, 0.0};
  double tau = 1.0;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
};

// One CSV row per draw: theta_i for Dirichlet draws, z_i for relaxed gates.
inline int cmd_sample(const SampleArgs& a, std::ostream& out, std::ostream& err) {
  try {
    SeededStream stream(a.seed);
    if (a.kind == "dirichlet") {
      for (std::size_t i = 0; i < a.alphas.size(); ++i) out << (i ? "," : "") << "theta_" << i;
      out << "\n";
      for (std::size_t n = 0; n < a.count; ++n) {
        const auto d = sample_dirichlet(a.alphas, stream);
        for (std::size_t i = 0; i < d.theta.size(); ++i) out << (i ? "," : "") << g17(d.theta[i]);
        out << "\n";
      }
    } else if (a.kind == "gate") {
      if (!(a.tau > 0.0)) throw DomainError("tau must be positive");
      for (std::size_t i = 0; i < a.logits.size(); ++i) out << (i ? "," : "") << "z_" << i;
      out << "\n";
      for (std::size_t n = 0; n < a.count; ++n) {
        for (std::size_t i = 0; i < a.logits.size(); ++i) {
          const double u = (a.logits[i] + sample_logistic(stream)) / a.tau;
          out << (i ? "," : "") << g17(1.0 / (1.0 + std::exp(-u)));
        }
        out << "\n";
      }
    } else {
      err << "error: unknown sample kind \"" << a.kind << "\" (expected dirichlet or gate)\n";
      return kExitUsage;
    }
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace dirmoe::cli
