#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cds/cds.hpp"
#include "cds/metrics.hpp"

namespace cds {

using nlohmann::json;

/// Thrown for malformed or inconsistent experiment configurations.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Benchmark description read from a JSON file; see configs/README.md.
struct ExperimentConfig {
  std::string task = "GM-2";
  std::string method = "CDS";  // CDS, NRPT, MALA or HMC
  /// Hyperparameter grid: each key maps to a list of values. Scalars are
  /// treated as one-element lists.
  json grid = json::object();
  std::vector<std::uint64_t> budgets{2000};
  std::size_t replicates = 3;
  std::uint64_t seed = 1;
  std::size_t n_samples = 1000;
  std::string output_dir = "out";
  /// Task base step; <= 0 picks 0.1 for mixtures and Gaussians, 1e-4 for LJ.
  double base_step = 0.0;
  double tau = 1.0;
  std::size_t mode_steps = 1000;
  std::vector<std::string> metrics{"w2", "mmd", "tv", "rel_mae"};
  /// Ground-truth sample file for targets without exact sampling.
  std::string reference_file;
  std::uint64_t truth_seed = 424242;
  std::size_t threads = 1;
  bool save_samples = true;
  std::size_t bootstrap_iterations = 50;
  std::vector<double> t0_values{1.0, 0.5, 0.1, 0.01};

  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::filesystem::path& p);
  json to_json() const;
  /// Throws ConfigError.
  void validate() const;
  double resolved_base_step() const;
  /// Cartesian product of the grid in sorted key order, each point merged
  /// over the method defaults.
  std::vector<json> expand_grid() const;
};

/// Default hyperparameters of a method.
json method_defaults(const std::string& method);

struct RunManifest {
  std::string kind = "run";  // "run" or "t0_sweep"
  std::string config_hash;
  std::string task;
  std::string method;
  std::string label;  // method, or CDS-<transport> for non-SDE transports
  json hyper = json::object();
  std::uint64_t budget = 0;
  std::size_t grid_index = 0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::uint64_t realized_evaluations = 0;  // per chain, the largest over chains
  std::uint64_t total_evaluations = 0;     // sum of per-chain ledgers
  std::uint64_t counter_evaluations = 0;   // target counter over the run
  std::uint64_t measurement_evaluations = 0;
  std::size_t n_chains = 0;
  std::size_t failed_chains = 0;
  double wall_time = 0.0;
  std::map<std::string, double> metrics;
  json diagnostics = json::object();
  std::string sample_file;
  std::string sample_hash;

  json to_json() const;
  static RunManifest from_json(const json& j);
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);
/// Hash of the raw little-endian row-major bytes.
std::string sample_hash(const Mat& m);

/// Writes `<stem>.f64` (little-endian doubles, row-major) and `<stem>.json`
/// (shape, dtype, hash). Returns the hash.
std::string save_samples(const Mat& m, const std::filesystem::path& stem);
/// Reads a sample file written by save_samples; verifies shape and hash.
Mat load_samples(const std::filesystem::path& stem);

/// Starting point for mode search: the origin, or a compact lattice for
/// particle systems so that no two particles coincide.
Vec default_initial_point(const Target& target);

/// Ground truth for metrics: exact draws when the target supports them,
/// otherwise the sample file named in the config.
std::optional<Mat> ground_truth(const ExperimentConfig& cfg, const Target& target);

/// Independent MALA or HMC chains from x_init; returns the final states.
struct LocalRun {
  Mat samples;
  std::vector<std::uint64_t> evaluations;
  std::vector<double> step_sizes;
  std::vector<char> failed;
};
LocalRun run_local_chains(const Target& target, const Vec& x_init, const KernelConfig& kernel, std::size_t steps,
                          std::size_t n_chains, std::uint64_t seed);

/// Independent NRPT ensembles with a flat reference; returns the beta = 1
/// replica of each. With pilot > 0 the schedule is optimized once from
/// statistics pooled over all ensembles after `pilot` sweeps.
struct NrptRun {
  Mat samples;
  std::vector<std::uint64_t> evaluations;
  std::vector<PtDiagnostics> diagnostics;
};
NrptRun run_nrpt_chains(const Target& target, const Vec& x_init, const NrptConfig& cfg, std::size_t sweeps,
                        std::size_t pilot, std::size_t n_chains, std::uint64_t seed);

/// Builds the CDS configuration for one grid point of an experiment.
CdsConfig cds_config_from(const json& hyper, double base_step);

/// Executes every (budget, grid point, replicate) job, computes metrics and
/// writes samples and manifests under cfg.output_dir. Manifests are returned
/// in job order and appended to manifests.jsonl.
std::vector<RunManifest> run_experiment(const ExperimentConfig& cfg);

struct T0Point {
  double t0 = 0.0;
  std::size_t replicas = 0;
  double pilot_gcb = 0.0;
  double gcb = 0.0;
  std::uint64_t round_trips = 0;
  double w2 = 0.0;
};

/// Stage-1 communication versus t0 under matched settings. Each t0 gets a
/// 10-replica pilot with one pooled schedule optimization; the main run uses
/// max(2, ceil(pilot GCB)) replicas, its own schedule optimization, the
/// largest budget of the config and SDE transport for W2.
std::vector<T0Point> sweep_t0(const ExperimentConfig& cfg, const std::vector<double>& t0_values);
std::vector<RunManifest> t0_manifests(const ExperimentConfig& cfg, const std::vector<T0Point>& pts);

/// Appends manifests to `<dir>/manifests.jsonl`.
void append_manifests(const std::filesystem::path& dir, const std::vector<RunManifest>& ms);
std::vector<RunManifest> read_manifests(const std::filesystem::path& dir);

/// Writes CSV series derived from manifests (and their sample files, looked
/// up in `sample_dir`) into `out_dir`. Returns the written paths in order.
/// Output depends only on the manifests and sample files.
std::vector<std::filesystem::path> emit_figures(const std::vector<RunManifest>& manifests,
                                                const std::filesystem::path& sample_dir,
                                                const std::filesystem::path& out_dir,
                                                std::size_t bootstrap_iterations = 50);

}  // namespace cds

namespace cds {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant checks run by the `validate` verb: analytic scores against
/// central differences, interpolant round trips, the swap-ratio identity,
/// budget ledgers against the target counter, and Pareto dominance against
/// brute force.
std::vector<CheckResult> invariant_suite(std::uint64_t seed);

}  // namespace cds
