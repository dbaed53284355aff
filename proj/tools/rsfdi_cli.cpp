#include <iostream>

#include <CLI11.hpp>

#include "rsfdi/pipeline.hpp"

int main(int argc, char** argv) {
  rsfdi::PipelineConfig cfg;
  CLI::App app{"fault detection filters for Riesz-spectral systems"};
  app.require_subcommand(1);

  int modes = 0, fault_index = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* c) {
    c->add_option("--system", cfg.system_path, "system JSON file")->check(CLI::ExistingFile);
    c->add_option("--scenario", cfg.scenario_path, "scenario JSON file")->check(CLI::ExistingFile);
    c->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
    c->add_option("--modes", modes, "modes per family")->check(CLI::PositiveNumber);
    c->add_option("--dt", dt, "simulation step")->check(CLI::PositiveNumber);
    c->add_option("--seed", seed, "base seed");
    c->add_option("--runs", cfg.runs, "Monte-Carlo runs")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--jobs", cfg.jobs, "parallel Monte-Carlo workers")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_flag("--allow-unverified", cfg.allow_unverified, "continue past undecided S* tails");
    c->add_option("--fault-index", fault_index, "restrict to one fault (1-based)")->check(CLI::PositiveNumber);
    c->add_option("--persist", cfg.n_persist, "samples a crossing must persist")->capture_default_str();
  };
  std::string command;
  for (const char* name : {"analyze", "synthesize", "simulate", "thresholds", "reproduce-example", "export-example"}) {
    CLI::App* c = app.add_subcommand(name);
    common(c);
    if (std::string(name) == "reproduce-example")
      c->add_flag("--convergence-report", cfg.convergence_report, "re-run the noiseless case at twice the modes");
    c->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  for (CLI::App* c : app.get_subcommands()) {
    if (c->count("--modes")) cfg.modes = modes;
    if (c->count("--dt")) cfg.dt = dt;
    if (c->count("--seed")) cfg.seed = seed;
    if (c->count("--fault-index")) cfg.fault_index = fault_index;
  }
  return rsfdi::run_command(command, cfg);
}
