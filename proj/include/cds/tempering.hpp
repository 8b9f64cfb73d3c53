#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "cds/kernels.hpp"
#include "cds/targets.hpp"

namespace cds {

/// Inverse temperatures beta_0 < ... < beta_N = 1 of a geometric annealing
/// path pi_beta ~ pi_ref^(1 - beta) pi^beta.
struct AnnealingSchedule {
  enum class Kind { Geometric, Optimized, Custom };

  std::vector<double> betas;
  Kind kind = Kind::Custom;

  /// `n_replicas` values spaced geometrically from beta_min to 1. With
  /// `include_zero` the first value is replaced by 0, which requires a proper
  /// reference.
  static AnnealingSchedule geometric(std::size_t n_replicas, double beta_min, bool include_zero = false);
  static AnnealingSchedule linear(std::size_t n_replicas);

  std::size_t replicas() const noexcept { return betas.size(); }
  /// Throws std::invalid_argument unless strictly increasing in [0, 1] with last value 1.
  void validate() const;
};

const char* to_string(AnnealingSchedule::Kind k);

/// (1 - beta) log pi_ref(x) + beta log pi~(x). Evaluates the target only when
/// beta > 0. A missing reference means the flat (improper) reference and drops
/// its term.
double annealed_log_density(double beta, const Vec& x, const std::optional<ReferenceDistribution>& ref,
                            const Target& target);

struct SwapStats {
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  double rejection_mass = 0.0;  // sum of (1 - alpha) over proposals

  double rejection_rate() const noexcept {
    return proposed == 0 ? 0.0 : rejection_mass / static_cast<double>(proposed);
  }
};

struct PtDiagnostics {
  std::uint64_t round_trips = 0;
  std::uint64_t sweeps = 0;
  double round_trip_rate = 0.0;
  double gcb_estimate = 0.0;  // NaN when some pair was never proposed
  std::vector<double> per_pair_rejection;
  std::vector<double> betas;
  std::vector<double> step_sizes;
  std::vector<double> acceptance;
};

struct NrptConfig {
  AnnealingSchedule schedule;
  KernelConfig kernel;
  /// Initial step size per replica; empty means kernel.step_size for all.
  std::vector<double> step_sizes;
};

/// Non-reversible parallel tempering over N + 1 replicas.
///
/// Replica n carries a chain targeting pi_{beta_n} whose cache holds the
/// annealed log-density and score; the target part is cached separately so
/// swaps cost no evaluations. With a proper reference and beta_0 = 0 the
/// bottom replica is refreshed by an exact reference draw each sweep, and its
/// target value is evaluated only when a swap with replica 1 is proposed.
class ReplicaEnsemble {
 public:
  /// `target` must be a counted fused density. Every replica starts at `init`;
  /// the shared initial evaluation costs one call.
  ReplicaEnsemble(DensityFn target, std::optional<ReferenceDistribution> reference, NrptConfig cfg, const Vec& init,
                  Rng rng);

  /// One NRPT iteration k = sweeps()+1: a local step per replica, then swaps
  /// of all pairs (n, n+1) with n = k mod 2.
  void sweep();
  void run(std::size_t sweeps) {
    for (std::size_t i = 0; i < sweeps; ++i) sweep();
  }

  /// log pi_{b_n}(x^{n+1}) + log pi_{b_{n+1}}(x^n) - log pi_{b_n}(x^n) - log pi_{b_{n+1}}(x^{n+1})
  /// from cached values. Requires both target values to be cached.
  double swap_log_ratio(std::size_t n) const;
  /// Exchanges the states of replicas n and n+1 unconditionally.
  void swap_states(std::size_t n);

  PtDiagnostics diagnostics() const;
  /// Sum of per-pair rejection rates; nullopt if some pair has no proposals.
  std::optional<double> estimate_gcb() const;
  std::uint64_t round_trips() const noexcept { return round_trips_; }

  std::size_t size() const noexcept { return replicas_.size(); }
  std::uint64_t sweeps() const noexcept { return sweeps_; }
  std::uint64_t evaluations() const noexcept { return evals_; }
  const AnnealingSchedule& schedule() const noexcept { return cfg_.schedule; }
  const std::vector<SwapStats>& swap_stats() const noexcept { return stats_; }

  const Vec& position(std::size_t n) const { return replicas_.at(n).chain.position; }
  double target_log_density(std::size_t n) const { return replicas_.at(n).target_lp; }
  const Vec& target_score(std::size_t n) const { return replicas_.at(n).target_score; }
  bool target_cached(std::size_t n) const { return replicas_.at(n).cached; }
  std::size_t particle_at(std::size_t n) const { return replicas_.at(n).particle; }
  /// Parity of the pairs proposed in the latest sweep (0 or 1).
  int last_parity() const noexcept { return last_parity_; }

  /// Replaces the annealing schedule, keeping states; caches are recomputed
  /// without new evaluations. Swap statistics are reset.
  void set_schedule(AnnealingSchedule schedule);

  /// Number of target evaluations sweep k (1-based) will consume.
  std::size_t sweep_cost(std::uint64_t k) const;

  double step_size(std::size_t n) const { return replicas_.at(n).chain.step_size; }
  void set_step_size(std::size_t n, double h) { replicas_.at(n).chain.step_size = h; }

  /// Target value and score at the latest exact reference draw, recorded when
  /// it was evaluated for a swap with replica 1.
  struct ReferencePoint {
    Vec x;
    double target_lp = 0.0;
    Vec target_score;
  };
  const std::optional<ReferencePoint>& last_reference_evaluation() const noexcept { return last_ref_; }

  /// Switches to a new target density. `transform` maps each cached
  /// (position, target log-density, target score) to its counterpart under the
  /// new target without evaluating it; an unevaluated reference draw is kept.
  void retarget(DensityFn target, const std::function<void(Vec& x, double& lp, Vec& g)>& transform);

 private:
  enum class Lineage : std::uint8_t { Unset, Rising, Falling };

  struct Replica {
    ChainState chain;
    double target_lp = 0.0;
    Vec target_score;
    bool cached = true;
    std::size_t particle = 0;
  };

  double beta(std::size_t n) const { return cfg_.schedule.betas[n]; }
  double ref_log(const Vec& x) const { return reference_ ? reference_->log_density(x) : 0.0; }
  bool exact_bottom() const { return reference_ && beta(0) == 0.0; }
  void refresh_annealed(Replica& r, double b) const;
  void ensure_cached(Replica& r);
  void local_step(std::size_t n);
  void update_lineage();

  DensityFn target_;
  std::optional<ReferenceDistribution> reference_;
  NrptConfig cfg_;
  std::vector<Replica> replicas_;
  std::vector<SwapStats> stats_;
  std::vector<Lineage> lineage_;
  Rng rng_;
  std::uint64_t sweeps_ = 0;
  std::uint64_t evals_ = 0;
  std::uint64_t round_trips_ = 0;
  int last_parity_ = -1;

  // Last target evaluation made through the annealed density.
  Vec last_g_;
  double last_lp_ = 0.0;
  std::optional<ReferencePoint> last_ref_;
};

/// Schedule equalizing per-pair rejection rates: the cumulative barrier is
/// interpolated piecewise-linearly over the current betas and inverted at
/// equally spaced levels. Endpoints are preserved. Degenerate statistics
/// (zero total barrier, non-finite rates, wrong length) return `current`.
AnnealingSchedule optimize_schedule(const AnnealingSchedule& current, const std::vector<double>& rejection_rates);

/// Pools swap statistics over ensembles sharing one schedule, optimizes the
/// schedule from the pooled rejection rates and installs it in all of them.
void optimize_pooled_schedule(std::vector<std::unique_ptr<ReplicaEnsemble>>& ensembles);

}  // namespace cds
