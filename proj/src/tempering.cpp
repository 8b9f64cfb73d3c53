#include "cds/tempering.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace cds {

// ------------------------------------------------------------- Schedules --

AnnealingSchedule AnnealingSchedule::geometric(std::size_t n_replicas, double beta_min, bool include_zero) {
  if (n_replicas < 1) throw std::invalid_argument("schedule needs at least one replica");
  if (!(beta_min > 0.0 && beta_min <= 1.0)) throw std::invalid_argument("beta_min must lie in (0, 1]");
  AnnealingSchedule s;
  s.kind = Kind::Geometric;
  s.betas.resize(n_replicas);
  if (n_replicas == 1) {
    s.betas[0] = 1.0;
    return s;
  }
  const double lo = std::log(beta_min);
  for (std::size_t i = 0; i < n_replicas; ++i)
    s.betas[i] = std::exp(lo * (1.0 - static_cast<double>(i) / static_cast<double>(n_replicas - 1)));
  s.betas.back() = 1.0;
  if (include_zero) s.betas.front() = 0.0;
  s.validate();
  return s;
}

AnnealingSchedule AnnealingSchedule::linear(std::size_t n_replicas) {
  if (n_replicas < 2) throw std::invalid_argument("linear schedule needs at least two replicas");
  AnnealingSchedule s;
  s.betas.resize(n_replicas);
  for (std::size_t i = 0; i < n_replicas; ++i) s.betas[i] = static_cast<double>(i) / static_cast<double>(n_replicas - 1);
  return s;
}

void AnnealingSchedule::validate() const {
  if (betas.empty()) throw std::invalid_argument("empty annealing schedule");
  if (betas.back() != 1.0) throw std::invalid_argument("annealing schedule must end at beta = 1");
  if (betas.front() < 0.0) throw std::invalid_argument("annealing schedule must start at beta >= 0");
  for (std::size_t i = 1; i < betas.size(); ++i)
    if (!(betas[i] > betas[i - 1])) throw std::invalid_argument("annealing schedule must be strictly increasing");
}

const char* to_string(AnnealingSchedule::Kind k) {
  switch (k) {
    case AnnealingSchedule::Kind::Geometric: return "geometric";
    case AnnealingSchedule::Kind::Optimized: return "optimized";
    case AnnealingSchedule::Kind::Custom: return "custom";
  }
  return "?";
}

double annealed_log_density(double beta, const Vec& x, const std::optional<ReferenceDistribution>& ref,
                            const Target& target) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  double out = 0.0;
  if (ref) out += (1.0 - beta) * ref->log_density(x);
  if (beta > 0.0) out += beta * target.log_density(x);
  return out;
}

// -------------------------------------------------------------- Ensemble --

namespace {

// Single definition of the annealed combination so that values recomputed
// after a swap are bit-identical to those produced during a kernel step.
double mix(double b, double ref_lp, double tgt_lp) { return b == 0.0 ? ref_lp : (1.0 - b) * ref_lp + b * tgt_lp; }

void mix_score(double b, const Vec& ref_g, const Vec& tgt_g, Vec& out) {
  if (b == 0.0) {
    out = ref_g;
    return;
  }
  out.resize(tgt_g.size());
  for (Eigen::Index i = 0; i < tgt_g.size(); ++i) out[i] = (1.0 - b) * ref_g[i] + b * tgt_g[i];
}

}  // namespace

ReplicaEnsemble::ReplicaEnsemble(DensityFn target, std::optional<ReferenceDistribution> reference, NrptConfig cfg,
                                 const Vec& init, Rng rng)
    : target_(std::move(target)), reference_(std::move(reference)), cfg_(std::move(cfg)), rng_(rng.split(0)) {
  cfg_.schedule.validate();
  if (cfg_.schedule.betas.front() == 0.0 && !reference_)
    throw std::invalid_argument("beta = 0 requires a proper reference distribution");
  if (!cfg_.step_sizes.empty() && cfg_.step_sizes.size() != cfg_.schedule.replicas())
    throw std::invalid_argument("one initial step size per replica required");

  Vec g;
  const double lp = target_(init, g);
  ++evals_;
  const std::size_t n = cfg_.schedule.replicas();
  replicas_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Replica& r = replicas_[i];
    r.chain.position = init;
    r.chain.step_size = cfg_.step_sizes.empty() ? cfg_.kernel.step_size : cfg_.step_sizes[i];
    r.chain.rng = rng.split(i + 1);
    r.target_lp = lp;
    r.target_score = g;
    r.cached = true;
    r.particle = i;
    refresh_annealed(r, beta(i));
  }
  stats_.assign(n > 0 ? n - 1 : 0, SwapStats{});
  lineage_.assign(n, Lineage::Unset);
  update_lineage();
}

void ReplicaEnsemble::refresh_annealed(Replica& r, double b) const {
  if (reference_) {
    const double lr = reference_->log_density(r.chain.position);
    const Vec gr = reference_->score(r.chain.position);
    r.chain.log_density = mix(b, lr, r.target_lp);
    mix_score(b, gr, r.target_score, r.chain.score);
  } else {
    r.chain.log_density = mix(b, 0.0, r.target_lp);
    mix_score(b, Vec::Zero(r.chain.position.size()), r.target_score, r.chain.score);
  }
}

void ReplicaEnsemble::ensure_cached(Replica& r) {
  if (r.cached) return;
  r.target_lp = target_(r.chain.position, r.target_score);
  ++evals_;
  r.cached = true;
}

void ReplicaEnsemble::local_step(std::size_t n) {
  Replica& r = replicas_[n];
  const double b = beta(n);
  if (n == 0 && exact_bottom()) {
    r.chain.position = reference_->sample(r.chain.rng);
    r.chain.log_density = reference_->log_density(r.chain.position);
    r.chain.score = reference_->score(r.chain.position);
    r.cached = false;
    return;
  }
  const DensityFn annealed = [this, b](const Vec& x, Vec& g) {
    ++evals_;
    last_lp_ = target_(x, last_g_);
    if (reference_) {
      const double lr = reference_->log_density(x);
      const Vec gr = reference_->score(x);
      mix_score(b, gr, last_g_, g);
      return mix(b, lr, last_lp_);
    }
    mix_score(b, Vec::Zero(x.size()), last_g_, g);
    return mix(b, 0.0, last_lp_);
  };
  const StepOutcome out = kernel_step(r.chain, annealed, cfg_.kernel);
  if (out.accepted) {
    r.target_lp = last_lp_;
    r.target_score = last_g_;
    r.cached = true;
  }
}

double ReplicaEnsemble::swap_log_ratio(std::size_t n) const {
  if (n + 1 >= replicas_.size()) throw std::out_of_range("swap pair index out of range");
  const Replica& a = replicas_[n];
  const Replica& c = replicas_[n + 1];
  if (!a.cached || !c.cached) throw std::logic_error("swap ratio needs cached target values");
  const double ba = beta(n), bc = beta(n + 1);
  const double ra = ref_log(a.chain.position), rc = ref_log(c.chain.position);
  return mix(ba, rc, c.target_lp) + mix(bc, ra, a.target_lp) - mix(ba, ra, a.target_lp) - mix(bc, rc, c.target_lp);
}

void ReplicaEnsemble::swap_states(std::size_t n) {
  if (n + 1 >= replicas_.size()) throw std::out_of_range("swap pair index out of range");
  Replica& a = replicas_[n];
  Replica& c = replicas_[n + 1];
  std::swap(a.chain.position, c.chain.position);
  std::swap(a.target_lp, c.target_lp);
  std::swap(a.target_score, c.target_score);
  std::swap(a.cached, c.cached);
  std::swap(a.particle, c.particle);
  refresh_annealed(a, beta(n));
  refresh_annealed(c, beta(n + 1));
}

void ReplicaEnsemble::sweep() {
  const std::uint64_t k = ++sweeps_;
  for (std::size_t n = 0; n < replicas_.size(); ++n) local_step(n);
  last_parity_ = static_cast<int>(k % 2);
  for (std::size_t n = static_cast<std::size_t>(last_parity_); n + 1 < replicas_.size(); n += 2) {
    if (n == 0 && exact_bottom() && !replicas_[0].cached) {
      ensure_cached(replicas_[0]);
      const Replica& r = replicas_[0];
      last_ref_ = ReferencePoint{r.chain.position, r.target_lp, r.target_score};
    }
    ensure_cached(replicas_[n]);
    ensure_cached(replicas_[n + 1]);
    const double lr = swap_log_ratio(n);
    const double alpha = std::isnan(lr) ? 0.0 : (lr >= 0.0 ? 1.0 : std::exp(lr));
    SwapStats& st = stats_[n];
    ++st.proposed;
    st.rejection_mass += 1.0 - alpha;
    if (rng_.uniform() < alpha) {
      ++st.accepted;
      swap_states(n);
    }
  }
  update_lineage();
}

void ReplicaEnsemble::update_lineage() {
  if (replicas_.size() < 2) return;
  const std::size_t bottom = replicas_.front().particle;
  const std::size_t top = replicas_.back().particle;
  if (lineage_[bottom] == Lineage::Falling) ++round_trips_;
  lineage_[bottom] = Lineage::Rising;
  if (lineage_[top] == Lineage::Rising) lineage_[top] = Lineage::Falling;
}

std::optional<double> ReplicaEnsemble::estimate_gcb() const {
  if (stats_.empty()) return std::nullopt;
  double total = 0.0;
  for (const SwapStats& s : stats_) {
    if (s.proposed == 0) return std::nullopt;
    total += s.rejection_rate();
  }
  return total;
}

PtDiagnostics ReplicaEnsemble::diagnostics() const {
  PtDiagnostics d;
  d.round_trips = round_trips_;
  d.sweeps = sweeps_;
  d.round_trip_rate = sweeps_ == 0 ? 0.0 : static_cast<double>(round_trips_) / static_cast<double>(sweeps_);
  d.gcb_estimate = estimate_gcb().value_or(std::nan(""));
  for (const SwapStats& s : stats_) d.per_pair_rejection.push_back(s.rejection_rate());
  d.betas = cfg_.schedule.betas;
  for (const Replica& r : replicas_) {
    d.step_sizes.push_back(r.chain.step_size);
    d.acceptance.push_back(r.chain.acceptance_rate());
  }
  return d;
}

void ReplicaEnsemble::set_schedule(AnnealingSchedule schedule) {
  schedule.validate();
  if (schedule.replicas() != replicas_.size()) throw std::invalid_argument("schedule size must match the ensemble");
  if (schedule.betas.front() == 0.0 && !reference_)
    throw std::invalid_argument("beta = 0 requires a proper reference distribution");
  cfg_.schedule = std::move(schedule);
  for (std::size_t n = 0; n < replicas_.size(); ++n) {
    if (beta(n) > 0.0) ensure_cached(replicas_[n]);
    refresh_annealed(replicas_[n], beta(n));
  }
  stats_.assign(stats_.size(), SwapStats{});
}

void ReplicaEnsemble::retarget(DensityFn target, const std::function<void(Vec&, double&, Vec&)>& transform) {
  target_ = std::move(target);
  for (std::size_t n = 0; n < replicas_.size(); ++n) {
    Replica& r = replicas_[n];
    if (r.cached) transform(r.chain.position, r.target_lp, r.target_score);
    refresh_annealed(r, beta(n));
  }
  last_ref_.reset();
}

std::size_t ReplicaEnsemble::sweep_cost(std::uint64_t k) const {
  std::size_t cost = 0;
  for (std::size_t n = 0; n < replicas_.size(); ++n) {
    if (n == 0 && exact_bottom()) continue;
    cost += cfg_.kernel.cost_per_step();
  }
  if (exact_bottom() && replicas_.size() > 1 && k % 2 == 0) ++cost;
  return cost;
}

// ---------------------------------------------------- Schedule adaptation --

AnnealingSchedule optimize_schedule(const AnnealingSchedule& current, const std::vector<double>& rejection_rates) {
  const auto& b = current.betas;
  if (b.size() < 3 || rejection_rates.size() + 1 != b.size()) return current;
  std::vector<double> cum(b.size(), 0.0);
  for (std::size_t i = 0; i < rejection_rates.size(); ++i) {
    const double r = rejection_rates[i];
    if (!std::isfinite(r) || r < 0.0) return current;
    cum[i + 1] = cum[i] + r;
  }
  const double total = cum.back();
  if (!(total > 0.0)) return current;

  AnnealingSchedule out;
  out.kind = AnnealingSchedule::Kind::Optimized;
  out.betas.resize(b.size());
  out.betas.front() = b.front();
  out.betas.back() = b.back();
  const std::size_t n = b.size() - 1;
  std::size_t seg = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const double level = total * static_cast<double>(i) / static_cast<double>(n);
    while (seg + 1 < n && cum[seg + 1] < level) ++seg;
    const double lo = cum[seg], hi = cum[seg + 1];
    const double frac = hi > lo ? (level - lo) / (hi - lo) : 0.0;
    out.betas[i] = b[seg] + frac * (b[seg + 1] - b[seg]);
  }
  for (std::size_t i = 1; i < out.betas.size(); ++i)
    if (!(out.betas[i] > out.betas[i - 1])) return current;
  return out;
}

void optimize_pooled_schedule(std::vector<std::unique_ptr<ReplicaEnsemble>>& ensembles) {
  if (ensembles.empty()) return;
  const std::size_t pairs = ensembles.front()->size() - 1;
  if (pairs == 0) return;
  std::vector<double> mass(pairs, 0.0), count(pairs, 0.0);
  for (const auto& e : ensembles)
    for (std::size_t p = 0; p < pairs; ++p) {
      mass[p] += e->swap_stats()[p].rejection_mass;
      count[p] += static_cast<double>(e->swap_stats()[p].proposed);
    }
  std::vector<double> rates(pairs);
  for (std::size_t p = 0; p < pairs; ++p) rates[p] = count[p] > 0 ? mass[p] / count[p] : std::nan("");
  const AnnealingSchedule next = optimize_schedule(ensembles.front()->schedule(), rates);
  for (auto& e : ensembles) e->set_schedule(next);
}

}  // namespace cds
