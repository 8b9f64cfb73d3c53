#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cds/cds.hpp"

using namespace cds;

namespace {

CdsConfig small_config() {
  CdsConfig c;
  c.t0 = 0.1;
  c.integration_steps = 10;
  c.sigma = 0.2;
  c.pt_steps = 12;
  c.stage1.schedule = AnnealingSchedule::geometric(4, 0.01, true);
  c.stage1.kernel = KernelConfig::mala(0.1);
  c.corrector = KernelConfig::mala(0.1);
  return c;
}

}  // namespace

TEST_CASE("time grids") {
  CdsConfig c;
  c.t0 = 0.1;
  c.integration_steps = 9;
  auto ts = c.times();
  REQUIRE(ts.size() == 10);
  CHECK(ts.front() == 0.1);
  CHECK(ts.back() == 1.0);
  CHECK(ts[1] == doctest::Approx(0.2));
  c.grid = TimeGrid::Geometric;
  ts = c.times();
  for (std::size_t i = 1; i + 1 < ts.size(); ++i) CHECK(ts[i + 1] / ts[i] == doctest::Approx(ts[1] / ts[0]));
  c.t0 = 1.0;
  CHECK(c.times() == std::vector<double>{1.0});
  c.t0 = 1e-5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("stage-1 step sizes interpolate between reference and conditional scales") {
  AnnealingSchedule s;
  s.betas = {0.0, 0.5, 1.0};
  const auto h = stage1_step_sizes(s, 0.2, 2.0, 0.01);
  CHECK(h[0] == doctest::Approx(0.4));
  CHECK(h[1] == doctest::Approx(0.2 * std::sqrt(2.0) * 0.1));
  CHECK(h[2] == doctest::Approx(0.002));
}

TEST_CASE("budget split") {
  const CdsConfig c = apply_budget_split(small_config(), 100, 0.3);
  CHECK(c.pt_steps == 30);
  CHECK(c.integration_steps == 70);
  CHECK(apply_budget_split(small_config(), 10, 1.0).integration_steps == 1);
}

TEST_CASE("planned evaluations equal the target counter for every chain") {
  auto target = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  for (std::size_t k : {0u, 1u, 9u})
    for (std::size_t m : {0u, 2u})
      for (double sigma : {0.0, 0.3})
        for (Transport tr : {Transport::SDE, Transport::ODE, Transport::InverseMap}) {
          CdsConfig c = small_config();
          c.pt_steps = k;
          c.corrector_steps = m;
          c.sigma = sigma;
          c.transport = tr;
          target->reset_evaluations();
          const CdsRun r = run_cds(*target, ref, c, 5, 17);
          const std::uint64_t planned = planned_evaluations(c).total();
          CAPTURE(k);
          CAPTURE(m);
          CAPTURE(sigma);
          CAPTURE(to_string(tr));
          for (const ChainLedger& l : r.ledgers) CHECK(l.total() == planned);
          CHECK(target->evaluations() == r.total_evaluations());
        }
}

TEST_CASE("mixed noise schedule: zero-noise steps skip evaluations") {
  auto target = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  CdsConfig c = small_config();
  c.integration_steps = 6;
  c.noise_schedule = {0.3, 0.0, 0.0, 0.2, 0.0, 0.1};
  const CdsRun r = run_cds(*target, ref, c, 4, 2);
  for (const ChainLedger& l : r.ledgers) CHECK(l.total() == planned_evaluations(c).total());
  CHECK(target->evaluations() == r.total_evaluations());
  // evaluated at t_3 and t_5 for the next drift, and at t_6 = 1
  CHECK(planned_evaluations(c).stage2 == 3);
}

TEST_CASE("constant noise from a cached start costs N(1 + M)") {
  CdsConfig c = small_config();
  c.integration_steps = 25;
  c.corrector_steps = 3;
  CHECK(planned_evaluations(c).stage2 == 25 * 4);
  c.transport = Transport::ODE;
  CHECK(planned_evaluations(c).stage2 == 0);
}

TEST_CASE("fit_to_budget picks the largest stage-1 length that fits") {
  CdsConfig c = small_config();
  for (std::uint64_t budget : {50u, 333u, 2000u}) {
    const auto f = fit_to_budget(c, budget);
    REQUIRE(f.has_value());
    CHECK(planned_evaluations(*f).total() <= budget);
    CdsConfig more = *f;
    more.pt_steps += 1;
    CHECK(planned_evaluations(more).total() > budget);
  }
  c.integration_steps = 1000;
  CHECK_FALSE(fit_to_budget(c, 100).has_value());
}

TEST_CASE("Euler on the linear velocity field is exact") {
  // x_{n+1} - z = (x_n - z)(1 + dt / t_n) = (x_n - z) t_{n+1} / t_n telescopes
  auto target = make_task("GM-2");
  Vec z(2);
  z << 0.5, -1.0;
  const ConditionalPath path(*target, z);
  CdsConfig c = small_config();
  Vec x0(2);
  x0 << 0.6, -0.8;
  for (TimeGrid g : {TimeGrid::Uniform, TimeGrid::Geometric}) {
    c.grid = g;
    const TransportResult r = stage2_ode(x0, c, path, true);
    const Vec exact = z + (x0 - z) / c.t0;
    CHECK((r.x - exact).norm() < 1e-12 * exact.norm());
    CHECK(r.evaluations == 0);
    CHECK(r.trajectory.size() == c.times().size());
  }
  CHECK((inverse_map_transport(x0, c.t0, path) - (z + (x0 - z) / c.t0)).norm() < 1e-12);
  CHECK(target->evaluations() == 0);
}

TEST_CASE("zero-noise SDE reduces to the ODE") {
  auto target = make_task("GM-2");
  const ConditionalPath path(*target, Vec::Zero(2));
  CdsConfig c = small_config();
  c.sigma = 0.0;
  Rng rng(1, 0);
  const Vec x0 = 0.1 * Vec::Ones(2);
  const TransportResult a = stage2_sde(x0, c, path, rng);
  const TransportResult b = stage2_ode(x0, c, path);
  CHECK((a.x - b.x).norm() < 1e-12);
}

TEST_CASE("SDE transport preserves the Gaussian marginal") {
  // pi = N(0, 1), nu_{t|z} = N((1 - t) z, t^2)
  auto target = GaussianTarget::standard(1);
  const Vec z = Vec::Constant(1, 0.5);
  const ConditionalPath path(*target, z);
  CdsConfig c;
  c.t0 = 0.1;
  c.integration_steps = 200;
  c.sigma = 0.5;
  Rng rng(3, 0);
  const int n = 20000;
  double m = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec x0 = Vec::Constant(1, 0.9 * 0.5 + 0.1 * rng.normal());
    const double x = stage2_sde(x0, c, path, rng).x[0];
    m += x / n;
    m2 += x * x / n;
  }
  const double var = m2 - m * m;
  CHECK(std::abs(m) < 4.0 * std::sqrt(1.0 / n));
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n) + 0.02);
}

TEST_CASE("time score matches a finite difference in t") {
  auto target = make_task("GM-2");
  Vec z(2);
  z << 0.3, 0.1;
  const ConditionalPath path(*target, z);
  Vec x(2);
  x << 1.0, -0.4;
  for (double t : {0.2, 0.6, 0.9}) {
    const double h = 1e-6;
    const double fd = (path.log_density(t + h, x) - path.log_density(t - h, x)) / (2 * h);
    CHECK(conditional_time_score(t, x, z, path.score(t, x)) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("SKL gradient estimator agrees with the Gaussian closed form") {
  // pi = pi_ref = N(0, 1), z = 0: SKL(t) = (t^2 + 1/t^2 - 2) / 2, derivative t - 1/t^3
  const ReferenceDistribution ref{Vec::Zero(1), 1.0};
  const Vec z = Vec::Zero(1);
  Rng rng(5, 0);
  for (double t : {0.5, 0.8}) {
    std::vector<CachedSample> cond, refs;
    for (int i = 0; i < 100000; ++i) {
      const double y = t * rng.normal();
      cond.push_back({Vec::Constant(1, y), -0.5 * y * y / (t * t) - std::log(t), Vec::Constant(1, -y / (t * t))});
      const double r = rng.normal();
      refs.push_back({Vec::Constant(1, r), 0.0, Vec::Constant(1, -r / (t * t))});
    }
    const SklGradient g = skl_time_gradient(t, cond, refs, z, ref);
    const double exact = t - 1.0 / (t * t * t);
    CAPTURE(t);
    CHECK(std::abs(g.value - exact) < 4.0 * g.std_error);
    CHECK(g.std_error < 0.1 * std::abs(exact));
  }
}

TEST_CASE("optimize_t0 projection and step cap") {
  auto zero = [](double, std::size_t) { return 0.0; };
  CHECK(optimize_t0(0.3, 10, 0.0, zero) == 0.3);
  CHECK(optimize_t0(2.0, 10, 0.0, zero) == 1.0 - kTimeFloor);
  CHECK(optimize_t0(0.0, 10, 0.0, zero) == kTimeFloor);
  auto push_up = [](double, std::size_t) { return -1e6; };
  CHECK(optimize_t0(0.3, 1, 1.0, push_up) == doctest::Approx(0.4));
  CHECK(optimize_t0(0.3, 100, 1.0, push_up) == 1.0 - kTimeFloor);
  auto quadratic = [](double t, std::size_t) { return 2.0 * (t - 0.6); };
  CHECK(optimize_t0(0.1, 500, 0.1, quadratic) == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("stage 1 with zero sweeps returns the anchor") {
  auto target = make_task("GM-2");
  Vec z(2);
  z << 1.0, 2.0;
  const ConditionalPath path(*target, z);
  const Stage1Result r = stage1(path, ReferenceDistribution{z, 1.0}, 0.1, 0, small_config().stage1, Rng(1, 0));
  CHECK(r.state.x == z);
  CHECK(r.evaluations == 1);
  CHECK(r.diagnostics.round_trips == 0);
}

TEST_CASE("runs are reproducible and independent of the thread count") {
  auto target = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  CdsConfig c = small_config();
  c.corrector_steps = 1;
  c.schedule_pilot_fraction = 0.5;
  const CdsRun a = run_cds(*target, ref, c, 6, 99, 1);
  const CdsRun b = run_cds(*target, ref, c, 6, 99, 3);
  CHECK(a.samples == b.samples);
  CHECK(a.schedule.betas == b.schedule.betas);
  const CdsRun d = run_cds(*target, ref, c, 6, 100, 1);
  CHECK(a.samples != d.samples);
}

TEST_CASE("online t0 descent moves t0 and keeps the ledger exact") {
  auto target = make_task("GM-2");
  const ReferenceDistribution ref{Vec::Zero(2), 1.0};
  CdsConfig c = small_config();
  c.t0 = 0.3;
  c.pt_steps = 60;
  c.optimize_t0 = true;
  c.t0_burn_in = 40;
  c.t0_learning_rate = 1e-3;
  const CdsRun r = run_cds(*target, ref, c, 16, 4);
  CHECK(r.t0 != 0.3);
  CHECK(r.t0 >= kTimeFloor);
  CHECK(r.t0 <= 1.0);
  for (const ChainLedger& l : r.ledgers) CHECK(l.total() == planned_evaluations(c).total());
  CHECK(target->evaluations() == r.total_evaluations());
}
