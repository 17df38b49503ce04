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

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dirmoe/cli.hpp"

int main(int argc, char** argv) {
  using namespace dirmoe::cli;
  CLI::App app{"DirMoE: Dirichlet-routed mixture of experts, desk scale"};
  app.require_subcommand(1);

  TrainArgs train;
  std::uint64_t train_seed = 0;
  std::string train_out;
  auto* t = app.add_subcommand("train", "Train a model from a JSON config; writes metrics.csv and summary.json");
  t->add_option("--config", train.config_path, "Config file (JSON)")->required();
  t->add_option("--set", train.overrides, "Override a field, e.g. --set router.k=2")->take_all();
  auto* t_seed = t->add_option("--seed", train_seed, "Override train.seed");
  auto* t_out = t->add_option("--out-dir", train_out, "Override output.dir");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Solve for the Dirichlet scale; writes calibration_report.json");
  c->add_option("mode", cal.mode, "simpson | variance | sweep")->required();
  c->add_option("--experts,-E", cal.experts, "Number of experts");
  c->add_option("--active,-s", cal.active, "Active experts s (k)");
  c->add_option("--h-target", cal.h, "Target expected Simpson index (simpson mode)");
  c->add_option("--m-target", cal.m, "Target active mass (variance mode)");
  c->add_option("--v-tar", cal.v_tar, "Target Var(T) (variance and sweep)");
  c->add_option("--alpha-lo", cal.alpha_lo, "Inactive concentration; alpha_hi follows from m");
  c->add_option("--sweep-m", cal.sweep_m, "Mass grid for sweep mode")->delimiter(',');
  c->add_option("--mc-samples", cal.mc_samples, "Monte Carlo draws for confirmation (0 skips)");
  c->add_option("--seed", cal.seed, "Monte Carlo seed");
  c->add_option("--out-dir", cal.out_dir, "Report directory");

  VerifyArgs ver;
  auto* v = app.add_subcommand("verify", "Run property suites; writes verify_report.json");
  v->add_option("suite", ver.suite, "specfun | samplers | gradients | calibration | objective | all");
  v->add_option("--seed", ver.seed, "Base seed");
  v->add_option("--mc-samples", ver.mc_samples, "Monte Carlo draws per check");
  v->add_option("--out-dir", ver.out_dir, "Report directory");

  SampleArgs smp;
  auto* s = app.add_subcommand("sample", "Print raw Dirichlet or relaxed-gate draws as CSV");
  s->add_option("kind", smp.kind, "dirichlet | gate");
  s->add_option("--alpha", smp.alphas, "Dirichlet concentrations")->delimiter(',');
  s->add_option("--logits", smp.logits, "Gate logits")->delimiter(',');
  s->add_option("--tau", smp.tau, "Gate temperature");
  s->add_option("--count,-n", smp.count, "Number of draws");
  s->add_option("--seed", smp.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (t->parsed()) {
    if (*t_seed) train.seed = train_seed;
    if (*t_out) train.out_dir = train_out;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (c->parsed()) return cmd_calibrate(cal, std::cout, std::cerr);
  if (v->parsed()) return cmd_verify(ver, std::cout, std::cerr);
  return cmd_sample(smp, std::cout, std::cerr);
}
