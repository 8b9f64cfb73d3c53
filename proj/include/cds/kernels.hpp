#pragma once

#include <cstdint>
#include <functional>

#include "cds/interpolant.hpp"
#include "cds/rng.hpp"

namespace cds {

/// Fused log-density + score callback. Returns log pi(x) and writes the
/// score into `grad`. Each call is one density evaluation for budgeting.
using DensityFn = std::function<double(const Vec& x, Vec& grad)>;

/// Density view of a target. If `ledger` is non-null it is incremented per call.
DensityFn target_density(const Target& target, std::uint64_t* ledger = nullptr);
/// Density view of nu_{t|z}.
DensityFn conditional_density(const ConditionalPath& path, double t, std::uint64_t* ledger = nullptr);

enum class KernelKind { MALA, HMC, RWMH };

const char* to_string(KernelKind k);
KernelKind kernel_kind_from_string(const std::string& s);

/// Optimal-scaling acceptance targets: 0.574 (MALA), 0.651 (HMC), 0.234 (RWMH).
double default_target_acceptance(KernelKind k);

struct KernelConfig {
  KernelKind kind = KernelKind::MALA;
  double step_size = 0.1;
  int leapfrog_steps = 5;
  double target_acceptance = 0.574;
  bool adapt = true;

  static KernelConfig mala(double h, bool adapt = true) { return {KernelKind::MALA, h, 1, 0.574, adapt}; }
  static KernelConfig hmc(double h, int steps, bool adapt = true) { return {KernelKind::HMC, h, steps, 0.651, adapt}; }
  static KernelConfig rwmh(double h, bool adapt = true) { return {KernelKind::RWMH, h, 1, 0.234, adapt}; }

  /// Evaluations consumed by one kernel step.
  std::size_t cost_per_step() const noexcept { return kind == KernelKind::HMC ? static_cast<std::size_t>(leapfrog_steps) : 1; }
};

/// One Markov chain with a cached log-density and score at its position.
/// The cache is refreshed only on accepted moves.
struct ChainState {
  Vec position;
  double log_density = 0.0;
  Vec score;
  double step_size = 0.1;
  std::uint64_t adapt_count = 0;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  Rng rng;

  /// Evaluates the density once at `x` to fill the cache.
  static ChainState start(Vec x, const DensityFn& density, double step_size, Rng rng);

  double acceptance_rate() const noexcept {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

struct StepOutcome {
  bool accepted = false;
  double accept_prob = 0.0;
  std::size_t evaluations = 0;
};

/// log of the MALA Metropolis-Hastings ratio for moving x -> y with step h.
double mala_log_ratio(const Vec& x, double lp_x, const Vec& g_x, const Vec& y, double lp_y, const Vec& g_y, double h);

/// Langevin proposal y = x + (h^2/2) g + h xi with full MH correction.
/// One evaluation (at y). `step_scale` multiplies the state's step size.
StepOutcome mala_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale = 1.0);

/// Momentum refresh, L leapfrog steps, MH on the total energy. L evaluations.
StepOutcome hmc_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale = 1.0);

/// Gaussian random-walk Metropolis. One evaluation.
StepOutcome rwmh_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale = 1.0);

/// Robbins-Monro update log h += (0.1 / sqrt(k)) (1[accepted] - target),
/// h clamped to [1e-12, 1e3].
void adapt_step_size(ChainState& s, bool accepted, const KernelConfig& cfg);

/// Step of the configured kind followed by adaptation when enabled.
StepOutcome kernel_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale = 1.0);

/// Kernel step invariant for nu_{t|z}. The base kernel runs on the
/// conditional density with its step size multiplied by t, which makes it the
/// exact pushforward of the base kernel through the linear map: the same
/// noise gives F_{t|z} of the base-chain move.
StepOutcome rescaled_kernel_step(ChainState& s, const ConditionalPath& path, double t, const KernelConfig& cfg,
                                 std::uint64_t* ledger = nullptr);

struct LeapfrogResult {
  Vec position;
  Vec momentum;
  double log_density = 0.0;
  Vec score;
  std::size_t evaluations = 0;
  bool finite = true;
};

/// L leapfrog steps of size h from (x, p) with cached (lp, g) at x.
LeapfrogResult leapfrog(const Vec& x, const Vec& p, double lp, const Vec& g, double h, int steps,
                        const DensityFn& density);

}  // namespace cds
