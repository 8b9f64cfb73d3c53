#include "cds/cds.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace cds {

const char* to_string(Transport t) {
  switch (t) {
    case Transport::SDE: return "SDE";
    case Transport::ODE: return "ODE";
    case Transport::InverseMap: return "INVERSE_MAP";
  }
  return "?";
}

Transport transport_from_string(const std::string& s) {
  if (s == "SDE" || s == "sde") return Transport::SDE;
  if (s == "ODE" || s == "ode") return Transport::ODE;
  if (s == "INVERSE_MAP" || s == "inverse_map" || s == "inverse-map") return Transport::InverseMap;
  throw std::invalid_argument("unknown transport: " + s);
}

// ---------------------------------------------------------------- Config --

std::vector<double> CdsConfig::times() const {
  if (!time_schedule.empty()) return time_schedule;
  if (t0 == 1.0) return {1.0};
  const std::size_t n = std::max<std::size_t>(integration_steps, 1);
  std::vector<double> ts(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n);
    ts[i] = grid == TimeGrid::Uniform ? t0 + (1.0 - t0) * f : t0 * std::pow(1.0 / t0, f);
  }
  ts.front() = t0;
  ts.back() = 1.0;
  return ts;
}

std::vector<double> CdsConfig::sigmas() const {
  const std::size_t n = times().size() - 1;
  if (!noise_schedule.empty()) return noise_schedule;
  return std::vector<double>(n, sigma);
}

void CdsConfig::validate() const {
  if (!(t0 >= kTimeFloor && t0 <= 1.0)) throw std::invalid_argument("t0 must lie in [1e-4, 1]");
  if (!time_schedule.empty()) {
    if (time_schedule.front() < kTimeFloor) throw std::invalid_argument("time schedule starts below the time floor");
    if (time_schedule.back() != 1.0) throw std::invalid_argument("time schedule must end exactly at 1");
    for (std::size_t i = 1; i < time_schedule.size(); ++i)
      if (!(time_schedule[i] > time_schedule[i - 1])) throw std::invalid_argument("time schedule must be increasing");
    if (optimize_t0) throw std::invalid_argument("t0 optimization needs a generated time grid");
  } else if (integration_steps == 0 && t0 < 1.0) {
    throw std::invalid_argument("at least one integration step is required");
  }
  const std::size_t n = times().size() - 1;
  if (!noise_schedule.empty() && noise_schedule.size() != n)
    throw std::invalid_argument("noise schedule needs one value per integration step");
  for (double s : sigmas())
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("noise schedule must be finite and >= 0");
  stage1.schedule.validate();
  if (!(schedule_pilot_fraction >= 0.0 && schedule_pilot_fraction < 1.0))
    throw std::invalid_argument("pilot fraction must lie in [0, 1)");
  if (!(corrector.step_size > 0.0)) throw std::invalid_argument("corrector step size must be positive");
  if (!(stage1.kernel.step_size > 0.0)) throw std::invalid_argument("stage-1 step size must be positive");
  if (optimize_t0 && stage1.schedule.betas.front() != 0.0)
    throw std::invalid_argument("t0 optimization needs beta_0 = 0 reference draws");
  if (!(t0_learning_rate >= 0.0)) throw std::invalid_argument("t0 learning rate must be >= 0");
}

CdsConfig apply_budget_split(CdsConfig cfg, std::size_t total_steps, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("budget split must lie in [0, 1]");
  if (total_steps < 1) throw std::invalid_argument("budget split needs at least one step");
  std::size_t k = static_cast<std::size_t>(std::llround(rho * static_cast<double>(total_steps)));
  k = std::min(k, total_steps - 1);
  cfg.pt_steps = k;
  cfg.integration_steps = total_steps - k;
  cfg.time_schedule.clear();
  cfg.noise_schedule.clear();
  return cfg;
}

std::vector<double> stage1_step_sizes(const AnnealingSchedule& s, double base_step, double tau, double t0) {
  std::vector<double> out;
  out.reserve(s.betas.size());
  for (double b : s.betas) out.push_back(base_step * std::pow(tau, 1.0 - b) * std::pow(t0, b));
  return out;
}

// --------------------------------------------------------------- Stage 1 --

Stage1Result stage1(const ConditionalPath& path, const ReferenceDistribution& ref, double t0, std::size_t sweeps,
                    const NrptConfig& cfg, Rng rng) {
  require_time(t0);
  ReplicaEnsemble ens(conditional_density(path, t0), ref, cfg, path.anchor(), rng);
  ens.run(sweeps);
  const std::size_t top = ens.size() - 1;
  Stage1Result r;
  r.state = CachedSample{ens.position(top), ens.target_log_density(top), ens.target_score(top)};
  r.diagnostics = ens.diagnostics();
  r.evaluations = ens.evaluations();
  return r;
}

// --------------------------------------------------------------- Stage 2 --

TransportResult stage2_sde(const CachedSample* start, const Vec& x0, const CdsConfig& cfg,
                           const ConditionalPath& path, Rng& rng, bool record) {
  const std::vector<double> ts = cfg.times();
  const std::vector<double> sig = cfg.sigmas();
  const std::size_t n_steps = ts.size() - 1;
  const std::size_t m = cfg.corrector_steps;

  TransportResult out;
  out.x = start ? start->x : x0;
  if (record) out.trajectory.push_back(out.x);
  if (n_steps == 0) return out;

  double lp = 0.0;
  Vec g;
  if (start) {
    lp = start->log_density;
    g = start->score;
  } else if (sig[0] > 0.0) {
    lp = path.evaluate_into(ts[0], out.x, g);
    ++out.evaluations;
  }

  ChainState corr;
  corr.step_size = cfg.corrector.step_size;
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double t = ts[n], dt = ts[n + 1] - ts[n];
    if (sig[n] > 0.0) {
      const Vec a = path.drift(t, out.x, sig[n], g);
      const double s = sig[n] * std::sqrt(dt);
      for (Eigen::Index i = 0; i < out.x.size(); ++i) out.x[i] += dt * a[i] + s * rng.normal();
    } else {
      out.x += dt * path.velocity(t, out.x);
    }
    if (!out.x.allFinite()) {
      out.failed = true;
      return out;
    }
    const bool last = n + 1 == n_steps;
    if (m > 0 || last || sig[n + 1] > 0.0) {
      lp = path.evaluate_into(ts[n + 1], out.x, g);
      ++out.evaluations;
    }
    if (m > 0) {
      corr.position = out.x;
      corr.log_density = lp;
      corr.score = g;
      corr.rng = rng;
      for (std::size_t j = 0; j < m; ++j) out.evaluations += rescaled_kernel_step(corr, path, ts[n + 1], cfg.corrector).evaluations;
      rng = corr.rng;
      out.x = corr.position;
      lp = corr.log_density;
      g = corr.score;
    }
    if (record) out.trajectory.push_back(out.x);
  }
  return out;
}

TransportResult stage2_ode(const Vec& x0, const CdsConfig& cfg, const ConditionalPath& path, bool record) {
  const std::vector<double> ts = cfg.times();
  TransportResult out;
  out.x = x0;
  if (record) out.trajectory.push_back(out.x);
  for (std::size_t n = 0; n + 1 < ts.size(); ++n) {
    out.x += (ts[n + 1] - ts[n]) * path.velocity(ts[n], out.x);
    if (!out.x.allFinite()) {
      out.failed = true;
      return out;
    }
    if (record) out.trajectory.push_back(out.x);
  }
  return out;
}

Vec inverse_map_transport(const Vec& x0, double t0, const ConditionalPath& path) {
  require_time(t0);
  return path.interpolant().inverse(t0, x0);
}

// ------------------------------------------------------------- t0 search --

double conditional_time_score(double t, const Vec& x, const Vec& z, const Vec& cond_score) {
  return -(x - z).dot(cond_score) / t - static_cast<double>(x.size()) / t;
}

namespace {

SklGradient skl_from_scores(const std::vector<double>& s_cond, std::vector<double> log_ratio,
                            const std::vector<double>& s_ref) {
  if (s_cond.empty() || s_ref.empty()) throw std::invalid_argument("SKL gradient needs non-empty sample sets");
  const double nc = static_cast<double>(s_cond.size()), nr = static_cast<double>(s_ref.size());
  double mean_lr = 0.0;
  for (double v : log_ratio) mean_lr += v;
  mean_lr /= nc;
  double m1 = 0.0, q1 = 0.0;
  for (std::size_t i = 0; i < s_cond.size(); ++i) {
    const double v = s_cond[i] * (log_ratio[i] - mean_lr);
    m1 += v;
    q1 += v * v;
  }
  m1 /= nc;
  double m2 = 0.0, q2 = 0.0;
  for (double v : s_ref) {
    m2 += v;
    q2 += v * v;
  }
  m2 /= nr;
  const double v1 = nc > 1 ? (q1 - nc * m1 * m1) / (nc - 1) : 0.0;
  const double v2 = nr > 1 ? (q2 - nr * m2 * m2) / (nr - 1) : 0.0;
  return {m1 - m2, std::sqrt(std::max(0.0, v1) / nc + std::max(0.0, v2) / nr)};
}

}  // namespace

SklGradient skl_time_gradient(double t, const std::vector<CachedSample>& cond_samples,
                              const std::vector<CachedSample>& ref_samples, const Vec& z,
                              const ReferenceDistribution& ref) {
  require_time(t);
  std::vector<double> sc, lr, sr;
  for (const CachedSample& c : cond_samples) {
    sc.push_back(conditional_time_score(t, c.x, z, c.score));
    lr.push_back(c.log_density - ref.log_density(c.x));
  }
  for (const CachedSample& r : ref_samples) sr.push_back(conditional_time_score(t, r.x, z, r.score));
  return skl_from_scores(sc, std::move(lr), sr);
}

double optimize_t0(double initial_t, std::size_t iterations, double lr,
                   const std::function<double(double, std::size_t)>& gradient, double max_move) {
  const double lo = kTimeFloor, hi = 1.0 - kTimeFloor;
  double t = std::clamp(initial_t, lo, hi);
  if (lr == 0.0) return t;
  for (std::size_t k = 1; k <= iterations; ++k) {
    const double g = gradient(t, k);
    if (!std::isfinite(g)) continue;
    t = std::clamp(t + std::clamp(-lr * g, -max_move, max_move), lo, hi);
  }
  return t;
}

// ------------------------------------------------------------------ Runs --

std::uint64_t CdsRun::total_evaluations() const {
  std::uint64_t s = 0;
  for (const ChainLedger& l : ledgers) s += l.total();
  return s;
}

std::uint64_t CdsRun::round_trips() const {
  std::uint64_t s = 0;
  for (const PtDiagnostics& d : stage1_diagnostics) s += d.round_trips;
  return s;
}

double CdsRun::mean_gcb() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const PtDiagnostics& d : stage1_diagnostics)
    if (std::isfinite(d.gcb_estimate)) {
      s += d.gcb_estimate;
      ++n;
    }
  return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

ChainLedger planned_evaluations(const CdsConfig& cfg, bool reference_is_proper) {
  ChainLedger l;
  const auto& betas = cfg.stage1.schedule.betas;
  const bool exact = reference_is_proper && !betas.empty() && betas.front() == 0.0;
  std::uint64_t per_sweep = 0;
  for (std::size_t n = 0; n < betas.size(); ++n)
    if (!(n == 0 && exact)) per_sweep += cfg.stage1.kernel.cost_per_step();
  l.stage1 = 1 + per_sweep * cfg.pt_steps;
  if (exact && betas.size() > 1) l.stage1 += cfg.pt_steps / 2;

  if (cfg.transport == Transport::SDE) {
    const std::vector<double> sig = cfg.sigmas();
    const std::size_t n_steps = sig.size();
    if (n_steps == 0) return l;
    if (cfg.deterministic_init && sig[0] > 0.0) ++l.stage2;
    for (std::size_t n = 0; n < n_steps; ++n) {
      const bool last = n + 1 == n_steps;
      if (cfg.corrector_steps > 0 || last || sig[n + 1] > 0.0) ++l.stage2;
      l.stage2 += cfg.corrector_steps * cfg.corrector.cost_per_step();
    }
  }
  return l;
}

std::optional<CdsConfig> fit_to_budget(CdsConfig cfg, std::uint64_t budget) {
  cfg.pt_steps = 0;
  if (planned_evaluations(cfg).total() > budget) return std::nullopt;
  // cost is affine in K up to the parity term, so bisect
  std::size_t lo = 0, hi = 1;
  auto fits = [&](std::size_t k) {
    CdsConfig c = cfg;
    c.pt_steps = k;
    return planned_evaluations(c).total() <= budget;
  };
  while (fits(hi)) {
    lo = hi;
    hi *= 2;
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  cfg.pt_steps = lo;
  return cfg;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

CdsRun run_cds(const Target& target, const ReferenceDistribution& ref, const CdsConfig& cfg, std::size_t n_chains,
               std::uint64_t seed, std::size_t threads) {
  cfg.validate();
  const std::size_t d = target.dim();
  if (ref.dim() != d) throw std::invalid_argument("reference dimension does not match the target");
  if (n_chains == 0) throw std::invalid_argument("need at least one chain");

  CdsRun run;
  run.anchors.resize(n_chains);
  std::vector<Rng> rngs;
  std::vector<std::unique_ptr<ConditionalPath>> paths;
  for (std::size_t c = 0; c < n_chains; ++c) {
    Rng base(seed, c);
    rngs.push_back(base);
    Rng zr = base.split(1);
    run.anchors[c] = cfg.anchor == AnchorMode::ReferenceMean ? ref.mean : ref.sample(zr);
    paths.push_back(std::make_unique<ConditionalPath>(target, run.anchors[c]));
  }

  double t = cfg.t0;
  NrptConfig ncfg = cfg.stage1;
  if (ncfg.step_sizes.empty()) ncfg.step_sizes = stage1_step_sizes(ncfg.schedule, ncfg.kernel.step_size, ref.std, t);
  std::vector<std::unique_ptr<ReplicaEnsemble>> ens(n_chains);
  parallel_for(n_chains, threads, [&](std::size_t c) {
    ens[c] = std::make_unique<ReplicaEnsemble>(conditional_density(*paths[c], t), ref, ncfg, run.anchors[c],
                                               rngs[c].split(2));
  });

  const std::size_t k_total = cfg.pt_steps;
  const std::size_t replicas = ncfg.schedule.replicas();
  const std::size_t pilot = (cfg.schedule_pilot_fraction > 0.0 && replicas >= 3)
                                ? static_cast<std::size_t>(cfg.schedule_pilot_fraction * static_cast<double>(k_total))
                                : 0;
  const std::size_t burn = cfg.optimize_t0 ? std::min(cfg.t0_burn_in, k_total) : 0;

  auto step_t0 = [&] {
    std::vector<double> sc, lr, sr;
    const std::size_t top = replicas - 1;
    for (std::size_t c = 0; c < n_chains; ++c) {
      const ReplicaEnsemble& e = *ens[c];
      sc.push_back(conditional_time_score(t, e.position(top), run.anchors[c], e.target_score(top)));
      lr.push_back(e.target_log_density(top) - ref.log_density(e.position(top)));
      if (const auto& rp = e.last_reference_evaluation())
        sr.push_back(conditional_time_score(t, rp->x, run.anchors[c], rp->target_score));
    }
    if (sr.empty()) return;
    const double g = skl_from_scores(sc, std::move(lr), sr).value;
    const double next = optimize_t0(t, 1, cfg.t0_learning_rate, [g](double, std::size_t) { return g; });
    if (next == t) return;
    const double ratio = next / t, shift = static_cast<double>(d) * std::log(ratio);
    for (std::size_t c = 0; c < n_chains; ++c) {
      const Vec& z = run.anchors[c];
      ens[c]->retarget(conditional_density(*paths[c], next), [&](Vec& x, double& lp, Vec& g2) {
        x = z + ratio * (x - z);
        lp -= shift;
        g2 /= ratio;
      });
      for (std::size_t n = 0; n < replicas; ++n)
        ens[c]->set_step_size(n, ens[c]->step_size(n) * std::pow(ratio, ens[c]->schedule().betas[n]));
    }
    t = next;
  };

  std::size_t done = 0;
  while (done < k_total) {
    std::size_t block = k_total - done;
    if (done < burn) block = 1;
    else if (pilot > done) block = pilot - done;
    parallel_for(n_chains, threads, [&](std::size_t c) { ens[c]->run(block); });
    done += block;
    if (done <= burn && done % 2 == 0) step_t0();
    if (pilot > 0 && done == pilot) optimize_pooled_schedule(ens);
  }

  run.t0 = t;
  run.schedule = ens.front()->schedule();
  CdsConfig tcfg = cfg;
  tcfg.t0 = t;

  run.samples.resize(static_cast<Eigen::Index>(n_chains), static_cast<Eigen::Index>(d));
  run.stage1_states.resize(n_chains);
  run.ledgers.resize(n_chains);
  run.stage1_diagnostics.resize(n_chains);
  run.failed.assign(n_chains, false);
  std::vector<char> failed(n_chains, 0);
  parallel_for(n_chains, threads, [&](std::size_t c) {
    ReplicaEnsemble& e = *ens[c];
    const std::size_t top = replicas - 1;
    const CachedSample s1{e.position(top), e.target_log_density(top), e.target_score(top)};
    run.stage1_states[c] = s1.x;
    run.stage1_diagnostics[c] = e.diagnostics();
    run.ledgers[c].stage1 = e.evaluations();
    Rng rng = rngs[c].split(3);
    TransportResult tr;
    switch (cfg.transport) {
      case Transport::SDE:
        tr = cfg.deterministic_init ? stage2_sde(nullptr, run.anchors[c], tcfg, *paths[c], rng)
                                    : stage2_sde(&s1, s1.x, tcfg, *paths[c], rng);
        break;
      case Transport::ODE:
        tr = stage2_ode(cfg.deterministic_init ? run.anchors[c] : s1.x, tcfg, *paths[c]);
        break;
      case Transport::InverseMap:
        tr.x = inverse_map_transport(cfg.deterministic_init ? run.anchors[c] : s1.x, t, *paths[c]);
        tr.failed = !tr.x.allFinite();
        break;
    }
    run.ledgers[c].stage2 = tr.evaluations;
    failed[c] = tr.failed ? 1 : 0;
    if (tr.failed) run.samples.row(static_cast<Eigen::Index>(c)).setConstant(std::nan(""));
    else run.samples.row(static_cast<Eigen::Index>(c)) = tr.x.transpose();
  });
  for (std::size_t c = 0; c < n_chains; ++c) run.failed[c] = failed[c] != 0;
  return run;
}

}  // namespace cds
