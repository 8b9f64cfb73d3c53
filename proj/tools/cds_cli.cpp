// Benchmark harness: run configs, sweep t0, emit figure CSVs, check invariants.
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "cds/bench.hpp"

namespace {

enum Exit { kOk = 0, kConfigError = 1, kRunFailure = 2, kEmptyInput = 3 };

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string task;
  std::string method;
};

cds::ExperimentConfig load(const Overrides& o) {
  if (o.config.empty()) throw cds::ConfigError("--config is required");
  cds::ExperimentConfig cfg = cds::ExperimentConfig::load(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (!o.task.empty()) cfg.task = o.task;
  if (!o.method.empty()) cfg.method = o.method;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads");
  cmd->add_option("--task", o.task, "task id, e.g. GM-2 or LJ-13");
  cmd->add_option("--method", o.method, "CDS, NRPT, MALA or HMC");
}

int cmd_run(const Overrides& o) {
  const cds::ExperimentConfig cfg = load(o);
  const auto ms = cds::run_experiment(cfg);
  std::size_t failed = 0;
  for (const auto& m : ms) {
    failed += m.failed_chains;
    std::cout << m.label << " budget=" << m.budget << " grid=" << m.grid_index << " rep=" << m.replicate
              << " evals=" << m.realized_evaluations;
    for (const auto& [k, v] : m.metrics) std::cout << " " << k << "=" << v;
    std::cout << "\n";
  }
  if (ms.empty()) {
    std::cerr << "no grid point fits any budget\n";
    return kRunFailure;
  }
  if (failed > 0) std::cerr << "warning: " << failed << " failed chains (flagged in manifests)\n";
  return kOk;
}

int cmd_t0(const Overrides& o) {
  const cds::ExperimentConfig cfg = load(o);
  const auto pts = cds::sweep_t0(cfg, cfg.t0_values);
  cds::append_manifests(cfg.output_dir, cds::t0_manifests(cfg, pts));
  for (const auto& p : pts)
    std::cout << "t0=" << p.t0 << " replicas=" << p.replicas << " pilot_gcb=" << p.pilot_gcb << " gcb=" << p.gcb
              << " round_trips=" << p.round_trips << " w2=" << p.w2 << "\n";
  return kOk;
}

int cmd_figures(const Overrides& o) {
  std::string dir = o.out;
  std::size_t boot = 50;
  if (!o.config.empty()) {
    const cds::ExperimentConfig cfg = load(o);
    dir = cfg.output_dir;
    boot = cfg.bootstrap_iterations;
  }
  if (dir.empty()) dir = std::getenv("CDS_OUTPUT_ROOT") ? std::getenv("CDS_OUTPUT_ROOT") : "out";
  const auto ms = cds::read_manifests(dir);
  if (ms.empty()) {
    std::cerr << "no manifests in " << dir << "\n";
    return kEmptyInput;
  }
  const std::filesystem::path root(dir);
  for (const auto& p : cds::emit_figures(ms, root / "samples", root / "figures", boot)) std::cout << p.string() << "\n";
  return kOk;
}

int cmd_validate(const Overrides& o) {
  if (!o.config.empty()) {
    load(o);
    std::cout << "config ok\n";
  }
  bool all = true;
  for (const auto& r : cds::invariant_suite(o.seed.value_or(1))) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    all = all && r.passed;
  }
  return all ? kOk : kRunFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion sampling benchmarks"};
  app.require_subcommand(1);
  Overrides o;
  auto* run = app.add_subcommand("run", "execute a config");
  auto* t0 = app.add_subcommand("t0-sweep", "stage-1 communication versus t0");
  auto* fig = app.add_subcommand("figures", "emit CSV series from manifests");
  auto* val = app.add_subcommand("validate", "check a config and run the invariant suite");
  for (auto* c : {run, t0, fig, val}) add_common(c, o);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }
  try {
    if (run->parsed()) return cmd_run(o);
    if (t0->parsed()) return cmd_t0(o);
    if (fig->parsed()) return cmd_figures(o);
    return cmd_validate(o);
  } catch (const cds::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return kRunFailure;
  }
}
