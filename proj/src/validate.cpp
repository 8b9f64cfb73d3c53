#include <algorithm>
#include <cmath>
#include <sstream>

#include "cds/bench.hpp"

namespace cds {

namespace {

std::string num_str(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Vec random_point(Rng& rng, std::size_t d, double scale) {
  Vec x(static_cast<Eigen::Index>(d));
  for (auto& v : x) v = scale * rng.normal();
  return x;
}

// Largest relative error of the analytic score against central differences.
double score_error(const Target& t, const Vec& x) {
  const Vec g = t.score(x);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    const double fd = (t.log_density_uncounted(a) - t.log_density_uncounted(b)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> invariant_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed, 0);

  {
    double worst = 0.0;
    for (const char* id : {"GAUSS-3", "GM-2", "GMNU-16"}) {
      auto t = make_task(id);
      for (int k = 0; k < 20; ++k) worst = std::max(worst, score_error(*t, random_point(rng, t->dim(), 4.0)));
    }
    auto lj = make_task("LJ-13");
    const Vec base = default_initial_point(*lj);
    for (int k = 0; k < 20; ++k) worst = std::max(worst, score_error(*lj, base + random_point(rng, lj->dim(), 0.05)));
    out.push_back({"score_vs_finite_difference", worst < 1e-4, "max rel err " + num_str(worst)});
  }

  {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const LinearInterpolant f(random_point(rng, 4, 3.0));
      const Vec x = random_point(rng, 4, 3.0);
      const double t = kTimeFloor + (1.0 - kTimeFloor) * rng.uniform();
      worst = std::max(worst, (f.forward(t, f.inverse(t, x)) - x).cwiseAbs().maxCoeff());
    }
    out.push_back({"interpolant_round_trip", worst < 1e-12, "max abs err " + num_str(worst)});
  }

  {
    auto t = make_task("GM-2");
    const ReferenceDistribution ref{Vec::Zero(2), 2.0};
    NrptConfig cfg;
    cfg.schedule = AnnealingSchedule::geometric(5, 0.01, true);
    cfg.kernel = KernelConfig::mala(0.3);
    ReplicaEnsemble e(target_density(*t), ref, cfg, Vec::Zero(2), Rng(seed, 1));
    e.run(20);
    double worst = 0.0;
    for (std::size_t n = 1; n + 1 < e.size(); ++n) {
      auto ell = [&](std::size_t i) {
        return t->log_density_uncounted(e.position(i)) - ref.log_density(e.position(i));
      };
      const auto& b = e.schedule().betas;
      const double identity = (b[n + 1] - b[n]) * (ell(n) - ell(n + 1));
      worst = std::max(worst, std::abs(e.swap_log_ratio(n) - identity));
    }
    out.push_back({"swap_ratio_identity", worst < 1e-9, "max abs err " + num_str(worst)});
  }

  {
    auto t = make_task("GM-2");
    CdsConfig cfg;
    cfg.stage1.schedule = AnnealingSchedule::geometric(4, 0.01, true);
    cfg.stage1.kernel = KernelConfig::mala(0.1);
    cfg.integration_steps = 20;
    cfg.corrector_steps = 1;
    const auto fitted = fit_to_budget(cfg, 500);
    bool ok = fitted.has_value();
    std::string detail = "budget does not fit";
    if (fitted) {
      const CdsRun r = run_cds(*t, ReferenceDistribution{Vec::Zero(2), 1.0}, *fitted, 8, seed);
      const std::uint64_t planned = planned_evaluations(*fitted).total();
      for (const ChainLedger& l : r.ledgers) ok = ok && l.total() == planned && planned <= 500;
      ok = ok && r.total_evaluations() == t->evaluations();
      detail = "planned " + std::to_string(planned) + ", counter " + std::to_string(t->evaluations()) +
               ", ledgers " + std::to_string(r.total_evaluations());
    }
    out.push_back({"budget_ledger_matches_counter", ok, detail});
  }

  {
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      std::vector<ParetoPoint> pts;
      for (int i = 0; i < 20; ++i) pts.push_back({std::floor(10 * rng.uniform()), rng.uniform(), {}});
      const ParetoRecord rec = pareto_front(pts);
      std::size_t brute = 0;
      for (const auto& p : pts) {
        bool dominated = false;
        for (const auto& q : pts) dominated = dominated || dominates(q, p);
        if (!dominated) ++brute;
      }
      // duplicates of a front point collapse to one entry
      std::vector<std::pair<double, double>> uniq;
      for (const auto& p : pts) {
        bool dominated = false;
        for (const auto& q : pts) dominated = dominated || dominates(q, p);
        if (!dominated && std::find(uniq.begin(), uniq.end(), std::make_pair(p.cost, p.value)) == uniq.end())
          uniq.emplace_back(p.cost, p.value);
      }
      ok = rec.front.size() == uniq.size() && brute >= uniq.size();
      for (const auto& f : rec.front)
        for (const auto& p : pts) ok = ok && !dominates(p, f);
    }
    out.push_back({"pareto_front_brute_force", ok, ok ? "20 clouds of 20 points" : "mismatch"});
  }
  return out;
}

}  // namespace cds
