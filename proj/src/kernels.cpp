#include "cds/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cds {

DensityFn target_density(const Target& target, std::uint64_t* ledger) {
  return [&target, ledger](const Vec& x, Vec& g) {
    if (ledger) ++*ledger;
    return target.evaluate_into(x, g);
  };
}

DensityFn conditional_density(const ConditionalPath& path, double t, std::uint64_t* ledger) {
  require_time(t);
  return [&path, t, ledger](const Vec& x, Vec& g) {
    if (ledger) ++*ledger;
    return path.evaluate_into(t, x, g);
  };
}

const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::MALA: return "MALA";
    case KernelKind::HMC: return "HMC";
    case KernelKind::RWMH: return "RWMH";
  }
  return "?";
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "MALA" || s == "mala") return KernelKind::MALA;
  if (s == "HMC" || s == "hmc") return KernelKind::HMC;
  if (s == "RWMH" || s == "rwmh") return KernelKind::RWMH;
  throw std::invalid_argument("unknown kernel kind: " + s);
}

double default_target_acceptance(KernelKind k) {
  switch (k) {
    case KernelKind::MALA: return 0.574;
    case KernelKind::HMC: return 0.651;
    case KernelKind::RWMH: return 0.234;
  }
  return 0.5;
}

ChainState ChainState::start(Vec x, const DensityFn& density, double step_size, Rng rng) {
  if (!(step_size > 0.0)) throw std::invalid_argument("step size must be positive");
  ChainState s;
  s.position = std::move(x);
  s.log_density = density(s.position, s.score);
  s.step_size = step_size;
  s.rng = rng;
  return s;
}

namespace {

// A proposal is usable only with a finite log-density and finite score.
bool usable(double lp, const Vec& g) { return std::isfinite(lp) && g.allFinite(); }

// Accept with probability min(1, exp(log_ratio)); NaN and -inf reject.
// Exactly one uniform is drawn per call so coupled chains stay aligned.
bool metropolis(Rng& rng, double log_ratio, double& prob) {
  const double u = rng.uniform();
  prob = std::isnan(log_ratio) ? 0.0 : (log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio));
  return u < prob;
}

}  // namespace

double mala_log_ratio(const Vec& x, double lp_x, const Vec& g_x, const Vec& y, double lp_y, const Vec& g_y, double h) {
  if (!std::isfinite(lp_y)) return -std::numeric_limits<double>::infinity();
  const double h2 = h * h;
  // log q(x | y) - log q(y | x)
  double fwd = 0.0, bwd = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double a = y[i] - x[i] - 0.5 * h2 * g_x[i];
    const double b = x[i] - y[i] - 0.5 * h2 * g_y[i];
    fwd += a * a;
    bwd += b * b;
  }
  return lp_y - lp_x + (fwd - bwd) / (2.0 * h2);
}

StepOutcome mala_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale) {
  (void)cfg;
  const double h = s.step_size * step_scale;
  const Eigen::Index d = s.position.size();
  thread_local Vec y, gy;
  y.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) y[i] = s.position[i] + 0.5 * h * h * s.score[i] + h * s.rng.normal();
  const double lpy = density(y, gy);
  StepOutcome out;
  out.evaluations = 1;
  ++s.proposed;
  const double log_ratio = usable(lpy, gy) ? mala_log_ratio(s.position, s.log_density, s.score, y, lpy, gy, h)
                                          : -std::numeric_limits<double>::infinity();
  out.accepted = metropolis(s.rng, log_ratio, out.accept_prob);
  if (out.accepted) {
    s.position = y;
    s.log_density = lpy;
    s.score = gy;
    ++s.accepted;
  }
  return out;
}

LeapfrogResult leapfrog(const Vec& x, const Vec& p, double lp, const Vec& g, double h, int steps,
                        const DensityFn& density) {
  LeapfrogResult r{x, p, lp, g, 0, true};
  r.momentum += 0.5 * h * r.score;
  for (int l = 0; l < steps; ++l) {
    r.position += h * r.momentum;
    r.log_density = density(r.position, r.score);
    ++r.evaluations;
    if (!std::isfinite(r.log_density) || !r.score.allFinite()) {
      r.finite = false;
      return r;
    }
    r.momentum += (l + 1 == steps ? 0.5 : 1.0) * h * r.score;
  }
  return r;
}

StepOutcome hmc_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale) {
  if (cfg.leapfrog_steps < 1) throw std::invalid_argument("HMC needs at least one leapfrog step");
  const double h = s.step_size * step_scale;
  const Vec p0 = s.rng.normal_vec(s.position.size());
  const LeapfrogResult r = leapfrog(s.position, p0, s.log_density, s.score, h, cfg.leapfrog_steps, density);
  StepOutcome out;
  out.evaluations = r.evaluations;
  ++s.proposed;
  double log_ratio = -std::numeric_limits<double>::infinity();
  if (r.finite) log_ratio = (r.log_density - 0.5 * r.momentum.squaredNorm()) - (s.log_density - 0.5 * p0.squaredNorm());
  out.accepted = metropolis(s.rng, log_ratio, out.accept_prob);
  if (out.accepted) {
    s.position = r.position;
    s.log_density = r.log_density;
    s.score = r.score;
    ++s.accepted;
  }
  return out;
}

StepOutcome rwmh_step(ChainState& s, const DensityFn& density, const KernelConfig&, double step_scale) {
  const double h = s.step_size * step_scale;
  const Vec y = s.position + h * s.rng.normal_vec(s.position.size());
  Vec gy;
  const double lpy = density(y, gy);
  StepOutcome out;
  out.evaluations = 1;
  ++s.proposed;
  const double log_ratio = usable(lpy, gy) ? lpy - s.log_density : -std::numeric_limits<double>::infinity();
  out.accepted = metropolis(s.rng, log_ratio, out.accept_prob);
  if (out.accepted) {
    s.position = y;
    s.log_density = lpy;
    s.score = std::move(gy);
    ++s.accepted;
  }
  return out;
}

void adapt_step_size(ChainState& s, bool accepted, const KernelConfig& cfg) {
  ++s.adapt_count;
  const double gamma = 0.1 / std::sqrt(static_cast<double>(s.adapt_count));
  const double log_h = std::log(s.step_size) + gamma * ((accepted ? 1.0 : 0.0) - cfg.target_acceptance);
  s.step_size = std::clamp(std::exp(log_h), 1e-12, 1e3);
}

StepOutcome kernel_step(ChainState& s, const DensityFn& density, const KernelConfig& cfg, double step_scale) {
  StepOutcome out;
  switch (cfg.kind) {
    case KernelKind::MALA: out = mala_step(s, density, cfg, step_scale); break;
    case KernelKind::HMC: out = hmc_step(s, density, cfg, step_scale); break;
    case KernelKind::RWMH: out = rwmh_step(s, density, cfg, step_scale); break;
  }
  if (cfg.adapt) adapt_step_size(s, out.accepted, cfg);
  return out;
}

StepOutcome rescaled_kernel_step(ChainState& s, const ConditionalPath& path, double t, const KernelConfig& cfg,
                                 std::uint64_t* ledger) {
  return kernel_step(s, conditional_density(path, t, ledger), cfg, t);
}

}  // namespace cds
