#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cds/bench.hpp"
#include "cds/targets.hpp"

using namespace cds;

namespace {

double central_difference(const Target& t, Vec x, Eigen::Index i) {
  const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = t.log_density_uncounted(x);
  x[i] = x0 - h;
  const double down = t.log_density_uncounted(x);
  return (up - down) / (2 * h);
}

double worst_score_error(const Target& t, const std::vector<Vec>& points) {
  double worst = 0.0;
  for (const Vec& x : points) {
    const Vec g = t.score(x);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      worst = std::max(worst, std::abs(central_difference(t, x, i) - g[i]) / std::max(1.0, std::abs(g[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("analytic scores match central differences on 100 points per task") {
  Rng rng(11, 0);
  for (const char* id : {"GAUSS-3", "GM-2", "GMNU-2", "GM-16", "GMNU-16"}) {
    auto t = make_task(id);
    std::vector<Vec> pts;
    for (int k = 0; k < 100; ++k) pts.push_back(6.0 * rng.normal_vec(static_cast<Eigen::Index>(t->dim())));
    CAPTURE(id);
    CHECK(worst_score_error(*t, pts) < 1e-4);
  }
  auto lj = make_task("LJ-13");
  const Vec base = default_initial_point(*lj);
  std::vector<Vec> pts;
  for (int k = 0; k < 100; ++k) pts.push_back(base + 0.05 * rng.normal_vec(39));
  CHECK(worst_score_error(*lj, pts) < 1e-4);
}

TEST_CASE("every query costs one evaluation, uncounted queries none") {
  auto t = make_task("GM-2");
  const Vec x = Vec::Constant(2, 0.3);
  t->log_density(x);
  t->score(x);
  t->evaluate(x);
  Vec g;
  t->evaluate_into(x, g);
  CHECK(t->evaluations() == 4);
  t->log_density_uncounted(x);
  CHECK(t->evaluations() == 4);
  t->reset_evaluations();
  CHECK(t->evaluations() == 0);
}

TEST_CASE("fused evaluation agrees with separate value and score") {
  auto t = make_task("GMNU-16");
  Rng rng(3, 0);
  const Vec x = 3.0 * rng.normal_vec(16);
  const Evaluation e = t->evaluate(x);
  CHECK(e.log_density == doctest::Approx(t->log_density(x)).epsilon(1e-13));
  CHECK((e.score - t->score(x)).norm() < 1e-12);
}

TEST_CASE("GM-2 density integrates to one on a grid") {
  auto t = make_task("GM-2");
  const double h = 0.05;
  double total = 0.0;
  Vec x(2);
  for (double a = -30.0; a <= 30.0; a += h)
    for (double b = -30.0; b <= 30.0; b += h) {
      x << a, b;
      total += std::exp(t->log_density_uncounted(x));
    }
  CHECK(std::abs(total * h * h - 1.0) < 1e-3);
}

TEST_CASE("mixture sampling reproduces weights and mean") {
  auto t = std::dynamic_pointer_cast<GaussianMixtureTarget>(make_task("GMNU-2"));
  REQUIRE(t);
  Rng rng(5, 0);
  const int n = 200000;
  std::vector<double> freq(t->components(), 0.0);
  Vec mean = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vec x = t->sample(rng);
    freq[t->nearest_component(x)] += 1.0 / n;
    mean += x / n;
  }
  Vec expected = Vec::Zero(2);
  for (std::size_t k = 0; k < t->components(); ++k)
    expected += t->weights()[static_cast<Eigen::Index>(k)] * t->means()[k];
  CHECK((mean - expected).norm() < 0.1);
  // components are well separated, so nearest-mean frequencies track weights
  for (std::size_t k = 0; k < t->components(); ++k)
    CHECK(std::abs(freq[k] - t->weights()[static_cast<Eigen::Index>(k)]) < 0.01);
}

TEST_CASE("mixture layout is reproducible and survives a JSON round trip") {
  auto a = std::dynamic_pointer_cast<GaussianMixtureTarget>(make_task("GM-16"));
  auto b = std::dynamic_pointer_cast<GaussianMixtureTarget>(make_task("GM-16"));
  for (std::size_t k = 0; k < a->components(); ++k) CHECK(a->means()[k] == b->means()[k]);
  auto c = GaussianMixtureTarget::from_json(a->to_json());
  const Vec x = Vec::Constant(16, 0.5);
  CHECK(c->log_density_uncounted(x) == doctest::Approx(a->log_density_uncounted(x)).epsilon(1e-14));
}

TEST_CASE("Lennard-Jones pair minimum and invariances") {
  Vec pair(6);
  pair << 0, 0, 0, std::pow(2.0, 1.0 / 6.0), 0, 0;
  CHECK(lj_energy(pair) == doctest::Approx(-1.0).epsilon(1e-12));
  pair << 0, 0, 0, 1, 0, 0;
  CHECK(lj_energy(pair) == doctest::Approx(0.0).epsilon(1e-12));

  auto t = make_task("LJ-13");
  Rng rng(2, 0);
  const Vec x = default_initial_point(*t) + 0.05 * rng.normal_vec(39);
  const double e = t->log_density_uncounted(x);

  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  Vec y(39), p(39);
  for (int i = 0; i < 13; ++i) {
    y.segment<3>(3 * i) = r * x.segment<3>(3 * i) + Eigen::Vector3d(4, -1, 2);
    p.segment<3>(3 * i) = x.segment<3>(3 * ((i + 5) % 13));
  }
  CHECK(t->log_density_uncounted(y) == doctest::Approx(e).epsilon(1e-10));
  CHECK(t->log_density_uncounted(p) == doctest::Approx(e).epsilon(1e-10));
}

TEST_CASE("coincident particles give zero density") {
  auto t = make_task("LJ-13");
  Vec x = default_initial_point(*t);
  x.segment<3>(3) = x.segment<3>(0);
  CHECK(std::isinf(t->log_density_uncounted(x)));
}

TEST_CASE("mode search reaches a stationary point and counts its calls") {
  auto t = make_task("GM-2");
  const ModeSearch ms = find_mode(*t, Vec::Zero(2), 1000);
  CHECK(t->evaluations() == 1000);
  CHECK(t->score(ms.mode).norm() < 1e-6);
  CHECK_FALSE(ms.diverged);
}

TEST_CASE("reference distribution is a normalized Gaussian") {
  const ReferenceDistribution ref{Vec::Constant(1, 2.0), 0.5};
  double total = 0.0;
  Vec x(1);
  for (double a = -2.0; a <= 6.0; a += 1e-3) {
    x[0] = a;
    total += std::exp(ref.log_density(x)) * 1e-3;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  x[0] = 2.5;
  CHECK(ref.score(x)[0] == doctest::Approx(-2.0));
}

TEST_CASE("unknown task ids are rejected") { CHECK_THROWS_AS(make_task("GM-3"), std::invalid_argument); }
