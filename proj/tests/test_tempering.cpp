#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cds/tempering.hpp"

using namespace cds;

namespace {

NrptConfig config(std::size_t replicas, double beta_min, bool zero, double h = 0.3) {
  NrptConfig c;
  c.schedule = AnnealingSchedule::geometric(replicas, beta_min, zero);
  c.kernel = KernelConfig::mala(h);
  return c;
}

}  // namespace

TEST_CASE("geometric schedule") {
  const auto s = AnnealingSchedule::geometric(4, 0.001);
  REQUIRE(s.replicas() == 4);
  CHECK(s.betas[0] == doctest::Approx(0.001));
  CHECK(s.betas[1] == doctest::Approx(0.01));
  CHECK(s.betas[2] == doctest::Approx(0.1));
  CHECK(s.betas[3] == 1.0);
  const auto z = AnnealingSchedule::geometric(4, 0.001, true);
  CHECK(z.betas[0] == 0.0);
  CHECK(z.betas[1] == doctest::Approx(0.01));
  AnnealingSchedule bad;
  bad.betas = {0.0, 0.5, 0.4, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.betas = {0.0, 1.0};
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("annealed density skips the target at beta zero") {
  auto t = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  const Vec x = Vec::Constant(2, 0.4);
  CHECK(annealed_log_density(0.0, x, ref, *t) == doctest::Approx(ref.log_density(x)));
  CHECK(t->evaluations() == 0);
  const double mid = annealed_log_density(0.3, x, ref, *t);
  CHECK(mid == doctest::Approx(0.7 * ref.log_density(x) + 0.3 * t->log_density_uncounted(x)));
  CHECK(annealed_log_density(0.3, x, std::nullopt, *t) == doctest::Approx(0.3 * t->log_density_uncounted(x)));
}

TEST_CASE("swap ratio equals the geometric-path identity") {
  auto t = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Constant(2, 1.0), 2.0};
  ReplicaEnsemble e(target_density(*t), ref, config(6, 0.01, false), Vec::Zero(2), Rng(3, 0));
  e.run(25);
  const auto& b = e.schedule().betas;
  for (std::size_t n = 0; n + 1 < e.size(); ++n) {
    auto ell = [&](std::size_t i) {
      return t->log_density_uncounted(e.position(i)) - ref.log_density(e.position(i));
    };
    CHECK(e.swap_log_ratio(n) == doctest::Approx((b[n + 1] - b[n]) * (ell(n) - ell(n + 1))).epsilon(1e-10));
  }
}

TEST_CASE("swap_states exchanges positions without evaluations") {
  auto t = make_task("GM-2");
  ReplicaEnsemble e(target_density(*t), std::nullopt, config(3, 0.1, false), Vec::Zero(2), Rng(3, 0));
  e.run(5);
  const auto before = t->evaluations();
  const Vec a = e.position(0), b = e.position(1);
  e.swap_states(0);
  CHECK(e.position(0) == b);
  CHECK(e.position(1) == a);
  CHECK(t->evaluations() == before);
}

TEST_CASE("zero sweeps give zero round trips and cost only the initial evaluation") {
  auto t = make_task("GM-2");
  ReplicaEnsemble e(target_density(*t), std::nullopt, config(4, 0.01, false), Vec::Zero(2), Rng(1, 0));
  CHECK(e.round_trips() == 0);
  CHECK(e.evaluations() == 1);
  CHECK(t->evaluations() == 1);
  CHECK(e.diagnostics().round_trips == 0);
}

TEST_CASE("sweep_cost predicts the evaluations of every sweep") {
  auto t = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 3.0};
  for (bool zero : {false, true}) {
    for (const KernelConfig& k : {KernelConfig::mala(0.2), KernelConfig::hmc(0.2, 3)}) {
      NrptConfig c = config(5, 0.01, zero);
      c.kernel = k;
      ReplicaEnsemble e(target_density(*t), ref, c, Vec::Zero(2), Rng(2, 0));
      for (std::uint64_t s = 1; s <= 40; ++s) {
        const std::uint64_t before = t->evaluations();
        const std::size_t planned = e.sweep_cost(s);
        e.sweep();
        CHECK(t->evaluations() - before == planned);
      }
      CHECK(e.evaluations() == t->evaluations());
      t->reset_evaluations();
    }
  }
}

TEST_CASE("exact reference replica: target evaluated only for proposed swaps with replica 1") {
  auto t = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 3.0};
  ReplicaEnsemble e(target_density(*t), ref, config(3, 0.1, true), Vec::Zero(2), Rng(5, 0));
  // replicas 1 and 2 take one MALA step each; replica 0 costs one call on even sweeps
  for (std::uint64_t k = 1; k <= 10; ++k) CHECK(e.sweep_cost(k) == (k % 2 == 0 ? 3u : 2u));
}

TEST_CASE("identical reference and target: swaps always accepted, barrier zero") {
  auto t = GaussianTarget::standard(2);
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  ReplicaEnsemble e(target_density(*t), ref, config(5, 0.01, true, 0.8), Vec::Zero(2), Rng(6, 0));
  e.run(400);
  const auto gcb = e.estimate_gcb();
  REQUIRE(gcb.has_value());
  CHECK(*gcb == doctest::Approx(0.0).epsilon(1e-12));
  // deterministic odd/even swaps with no rejections: a lap takes about 2N sweeps
  CHECK(e.round_trips() > 400 / (2 * 5) - 10);
}

TEST_CASE("beta = 1 replica samples the target") {
  GaussianTarget t(Vec::Constant(1, 2.0), 0.5);
  const ReferenceDistribution ref{Vec::Zero(1), 3.0};
  ReplicaEnsemble e(target_density(t), ref, config(4, 0.05, true, 0.3), Vec::Zero(1), Rng(7, 0));
  e.run(2000);
  double m = 0.0, m2 = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    e.sweep();
    const double x = e.position(3)[0];
    m += x / n;
    m2 += x * x / n;
  }
  CHECK(m == doctest::Approx(2.0).epsilon(0.02));
  CHECK(m2 - m * m == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("schedule optimization equalizes rejection mass") {
  AnnealingSchedule s;
  s.betas = {0.0, 0.25, 0.5, 0.75, 1.0};
  // equal rates leave the schedule unchanged
  const auto same = optimize_schedule(s, {0.2, 0.2, 0.2, 0.2});
  for (std::size_t i = 0; i < 5; ++i) CHECK(same.betas[i] == doctest::Approx(s.betas[i]));
  // all the barrier in the last interval pulls the betas towards 1
  const auto moved = optimize_schedule(s, {0.0, 0.0, 0.0, 0.8});
  CHECK(moved.betas.front() == 0.0);
  CHECK(moved.betas.back() == 1.0);
  CHECK(moved.betas[1] == doctest::Approx(0.8125));
  CHECK(moved.betas[2] == doctest::Approx(0.875));
  CHECK(moved.betas[3] == doctest::Approx(0.9375));
  CHECK_NOTHROW(moved.validate());
  // degenerate statistics keep the current schedule
  CHECK(optimize_schedule(s, {0.0, 0.0, 0.0, 0.0}).betas == s.betas);
  CHECK(optimize_schedule(s, {0.1, 0.2}).betas == s.betas);
}

TEST_CASE("pooled schedule optimization installs one schedule everywhere") {
  auto t = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  std::vector<std::unique_ptr<ReplicaEnsemble>> ens;
  for (std::uint64_t c = 0; c < 4; ++c)
    ens.push_back(std::make_unique<ReplicaEnsemble>(target_density(*t), ref, config(6, 0.01, true), Vec::Zero(2),
                                                    Rng(8, c)));
  for (auto& e : ens) e->run(100);
  optimize_pooled_schedule(ens);
  for (auto& e : ens) {
    CHECK(e->schedule().betas == ens.front()->schedule().betas);
    CHECK(e->schedule().kind == AnnealingSchedule::Kind::Optimized);
  }
}

TEST_CASE("same seed, same trajectory") {
  auto t = make_task("GM-2");
  ReplicaEnsemble a(target_density(*t), std::nullopt, config(4, 0.01, false), Vec::Zero(2), Rng(9, 1));
  ReplicaEnsemble b(target_density(*t), std::nullopt, config(4, 0.01, false), Vec::Zero(2), Rng(9, 1));
  a.run(200);
  b.run(200);
  for (std::size_t n = 0; n < 4; ++n) CHECK(a.position(n) == b.position(n));
  CHECK(a.round_trips() == b.round_trips());
}
