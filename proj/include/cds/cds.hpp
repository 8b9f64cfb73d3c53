#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cds/interpolant.hpp"
#include "cds/kernels.hpp"
#include "cds/tempering.hpp"

namespace cds {

enum class Transport { SDE, ODE, InverseMap };
enum class TimeGrid { Uniform, Geometric };
enum class AnchorMode { ReferenceMean, Sampled };

const char* to_string(Transport t);
Transport transport_from_string(const std::string& s);

/// Configuration of the two-stage conditional diffusion sampler.
struct CdsConfig {
  double t0 = 0.01;
  /// Number of integration steps N; ignored when `time_schedule` is given.
  std::size_t integration_steps = 100;
  TimeGrid grid = TimeGrid::Uniform;
  /// Explicit t_0 < ... < t_N = 1; overrides t0/integration_steps/grid.
  std::vector<double> time_schedule;
  /// Constant diffusion coefficient, used when `noise_schedule` is empty.
  double sigma = 0.1;
  /// Explicit sigma_0..sigma_{N-1}.
  std::vector<double> noise_schedule;

  std::size_t pt_steps = 100;  // K sweeps of stage 1
  NrptConfig stage1;
  /// Fraction of stage-1 sweeps used as a pilot before a single schedule
  /// optimization; 0 disables it.
  double schedule_pilot_fraction = 0.0;

  std::size_t corrector_steps = 0;  // M
  KernelConfig corrector = KernelConfig::mala(0.1);

  Transport transport = Transport::SDE;
  AnchorMode anchor = AnchorMode::ReferenceMean;
  /// Start stage 2 at x_{t0} = z instead of a stage-1 sample.
  bool deterministic_init = false;

  /// Online SKL descent on t0 during the first `t0_burn_in` stage-1 sweeps.
  bool optimize_t0 = false;
  std::size_t t0_burn_in = 0;
  double t0_learning_rate = 1e-3;

  /// Resolved time grid t_0 < ... < t_N = 1.
  std::vector<double> times() const;
  /// Resolved sigma_0..sigma_{N-1}.
  std::vector<double> sigmas() const;
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

/// Splits `total_steps` as K = round(rho * total) stage-1 sweeps and the
/// remainder as integration steps (at least one).
CdsConfig apply_budget_split(CdsConfig cfg, std::size_t total_steps, double rho);

/// Per-replica initial step sizes for stage 1: h * tau^(1 - beta) * t0^beta.
std::vector<double> stage1_step_sizes(const AnnealingSchedule& s, double base_step, double tau, double t0);

/// A point of nu_{t|z} with its cached conditional log-density and score.
struct CachedSample {
  Vec x;
  double log_density = 0.0;
  Vec score;
};

struct Stage1Result {
  CachedSample state;  // the beta = 1 replica
  PtDiagnostics diagnostics;
  std::uint64_t evaluations = 0;
};

/// NRPT on nu_{t0|z} against the reference, all replicas started at z.
/// Returns the beta = 1 replica after `sweeps` sweeps. With sweeps = 0 the
/// result is z at the cost of the single initial evaluation.
Stage1Result stage1(const ConditionalPath& path, const ReferenceDistribution& ref, double t0, std::size_t sweeps,
                    const NrptConfig& cfg, Rng rng);

struct TransportResult {
  Vec x;
  std::uint64_t evaluations = 0;
  bool failed = false;
  /// States at t_0..t_N when recording was requested.
  std::vector<Vec> trajectory;
};

/// Euler-Maruyama integration of dx = a_{t|z}(x) dt + sigma_t dW from t_0 to
/// 1 with M corrector steps after each move. `start` carries the cached
/// evaluation at (t_0, x_0) when available; otherwise one evaluation is spent
/// when the first drift needs a score. A target evaluation is made at
/// (t_{n+1}, x_{n+1}) only when a corrector runs, the next drift needs a
/// score, or t_{n+1} = 1, so a constant sigma > 0 schedule costs exactly
/// N (1 + M) evaluations from a cached start.
TransportResult stage2_sde(const CachedSample* start, const Vec& x0, const CdsConfig& cfg,
                           const ConditionalPath& path, Rng& rng, bool record = false);
inline TransportResult stage2_sde(const Vec& x0, const CdsConfig& cfg, const ConditionalPath& path, Rng& rng,
                                  bool record = false) {
  return stage2_sde(nullptr, x0, cfg, path, rng, record);
}

/// Euler integration of the velocity field alone; no target evaluations.
TransportResult stage2_ode(const Vec& x0, const CdsConfig& cfg, const ConditionalPath& path, bool record = false);

/// F_{t0|z}^{-1}(x0); no target evaluations.
Vec inverse_map_transport(const Vec& x0, double t0, const ConditionalPath& path);

/// d/dt log pi_{t|z}(x) for the linear map from the conditional score:
/// -(x - z)^T score / t - D / t.
double conditional_time_score(double t, const Vec& x, const Vec& z, const Vec& cond_score);

struct SklGradient {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of d/dt SKL(nu_ref, nu_{t|z}):
/// E_{nu_{t|z}}[s (log pi_{t|z} - log pi_ref)] - E_{nu_ref}[s], s = d/dt log pi_{t|z}.
/// The unknown normalizer is removed by centering the log-ratio, which leaves
/// the expectation unchanged since E_{nu_{t|z}}[s] = 0. Uses only cached values.
SklGradient skl_time_gradient(double t, const std::vector<CachedSample>& cond_samples,
                              const std::vector<CachedSample>& ref_samples, const Vec& z,
                              const ReferenceDistribution& ref);

/// Projected gradient descent t <- clamp(t - lr * g(t, k), floor, 1 - floor),
/// each move capped at `max_move`.
double optimize_t0(double initial_t, std::size_t iterations, double lr,
                   const std::function<double(double t, std::size_t k)>& gradient, double max_move = 0.1);

struct ChainLedger {
  std::uint64_t stage1 = 0;
  std::uint64_t stage2 = 0;
  std::uint64_t total() const noexcept { return stage1 + stage2; }
};

struct CdsRun {
  Mat samples;  // n_chains x D
  std::vector<Vec> anchors;
  std::vector<Vec> stage1_states;
  std::vector<ChainLedger> ledgers;
  std::vector<PtDiagnostics> stage1_diagnostics;
  std::vector<bool> failed;
  double t0 = 0.0;  // final value, differs from the config when optimized
  AnnealingSchedule schedule;

  std::uint64_t total_evaluations() const;
  std::uint64_t round_trips() const;
  double mean_gcb() const;
};

/// Planned evaluations per chain for a configuration (stage 1 + stage 2).
ChainLedger planned_evaluations(const CdsConfig& cfg, bool reference_is_proper = true);

/// Largest pt_steps such that the planned per-chain cost fits in `budget`.
/// Returns nullopt when even K = 0 does not fit.
std::optional<CdsConfig> fit_to_budget(CdsConfig cfg, std::uint64_t budget);

/// Runs `n_chains` independent CDS chains. Stage 1 runs the chains in
/// lockstep so that the pilot schedule optimization and the online t0 descent
/// can pool statistics across chains; stage 2 is embarrassingly parallel.
CdsRun run_cds(const Target& target, const ReferenceDistribution& ref, const CdsConfig& cfg, std::size_t n_chains,
               std::uint64_t seed, std::size_t threads = 1);

/// Runs fn(i) for i in [0, n) over up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace cds
