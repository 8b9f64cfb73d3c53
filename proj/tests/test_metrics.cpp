#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cds/metrics.hpp"

using namespace cds;

namespace {

Mat random_points(Rng& rng, Eigen::Index n, Eigen::Index d, double scale = 1.0) {
  Mat m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Minimum over all permutations.
double brute_assignment(const Mat& cost) {
  std::vector<int> p(static_cast<std::size_t>(cost.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) c += cost(static_cast<Eigen::Index>(i), p[i]);
    best = std::min(best, c);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Vec rigid(const Vec& x, const Eigen::Matrix3d& r, const Eigen::Vector3d& shift) {
  Vec y(x.size());
  for (Eigen::Index i = 0; i < x.size() / 3; ++i) y.segment<3>(3 * i) = r * x.segment<3>(3 * i) + shift;
  return y;
}

}  // namespace

TEST_CASE("Hungarian assignment matches brute force") {
  Rng rng(1, 0);
  for (int trial = 0; trial < 30; ++trial) {
    Mat cost(6, 6);
    for (Eigen::Index i = 0; i < 6; ++i)
      for (Eigen::Index j = 0; j < 6; ++j) cost(i, j) = rng.uniform();
    const auto a = solve_assignment(cost);
    double c = 0.0;
    std::vector<bool> used(6, false);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK_FALSE(used[a[i]]);
      used[a[i]] = true;
      c += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a[i]));
    }
    CHECK(c == doctest::Approx(brute_assignment(cost)).epsilon(1e-12));
  }
}

TEST_CASE("W2 equals the 5! enumeration") {
  Rng rng(2, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_points(rng, 5, 3), b = random_points(rng, 5, 3, 2.0);
    Mat cost(5, 5);
    for (Eigen::Index i = 0; i < 5; ++i)
      for (Eigen::Index j = 0; j < 5; ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    const double oracle = std::sqrt(brute_assignment(cost) / 5.0);
    CHECK(wasserstein2(SampleSet(a), SampleSet(b)) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("W2 of a set with itself and with a translate") {
  Rng rng(3, 0);
  const Mat a = random_points(rng, 50, 2);
  CHECK(wasserstein2(SampleSet(a), SampleSet(a)) == 0.0);
  Mat b = a;
  b.col(0).array() += 3.0;
  b.col(1).array() -= 4.0;
  CHECK(wasserstein2(SampleSet(a), SampleSet(b)) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("W2 subsamples unequal sets deterministically") {
  Rng rng(4, 0);
  const Mat a = random_points(rng, 30, 2), b = random_points(rng, 50, 2);
  const double w = wasserstein2(SampleSet(a), SampleSet(b));
  CHECK(w == wasserstein2(SampleSet(a), SampleSet(b)));
  CHECK(w > 0.0);
  CHECK_THROWS_AS(wasserstein2(SampleSet(a), SampleSet(random_points(rng, 5, 3))), std::invalid_argument);
}

TEST_CASE("Kabsch distance: rigid copies, mirror images and two particles") {
  Rng rng(5, 0);
  const Vec x = rng.normal_vec(3 * 7);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(1.3, Eigen::Vector3d(0.2, -1, 0.5).normalized()).toRotationMatrix();
  CHECK(kabsch_rmsd(x, rigid(x, r, Eigen::Vector3d(1, 2, 3))) < 1e-10);
  // a reflection is not a rotation; a generic 7-point cloud is chiral
  const Eigen::Matrix3d mirror = Eigen::Vector3d(1, 1, -1).asDiagonal();
  CHECK(kabsch_rmsd(x, rigid(x, mirror, Eigen::Vector3d::Zero())) > 1e-3);
  // two particles: only the separation matters, residual |d_a - d_b| / sqrt(2)
  Vec a(6), b(6);
  a << 0, 0, 0, 1, 0, 0;
  b << 5, 5, 5, 5, 3, 5;
  CHECK(kabsch_rmsd(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  // symmetric in its arguments
  const Vec y = rng.normal_vec(21);
  CHECK(kabsch_rmsd(x, y) == doctest::Approx(kabsch_rmsd(y, x)).epsilon(1e-10));
}

TEST_CASE("aligned W2 ignores rigid motions") {
  Rng rng(6, 0);
  Mat a = random_points(rng, 8, 9), b(8, 9);
  for (Eigen::Index i = 0; i < 8; ++i) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(rng.uniform(0, 3), rng.normal_vec(3).normalized()).toRotationMatrix();
    b.row(7 - i) = rigid(a.row(i).transpose(), r, rng.normal_vec(3)).transpose();
  }
  CHECK(wasserstein2(SampleSet(a), SampleSet(b), true) < 1e-8);
  CHECK(wasserstein2(SampleSet(a), SampleSet(b), false) > 0.1);
}

TEST_CASE("MMD on energies") {
  Rng rng(7, 0);
  std::vector<double> a(500), b(500);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal() + 1.0;
  CHECK(mmd_squared(a, a, median_bandwidth(a, a)) == 0.0);
  CHECK(mmd_squared(a, b, median_bandwidth(a, b)) > 0.05);
  std::vector<double> c(500);
  for (auto& v : c) v = rng.normal();
  CHECK(std::abs(mmd_squared(a, c, median_bandwidth(a, c))) < 0.01);
  // median pairwise distance of the pooled values {0, 1, 3}: distances 1, 2, 3
  CHECK(median_bandwidth({0.0, 1.0}, {3.0}) == doctest::Approx(2.0));
  CHECK(median_bandwidth({2.0}, {2.0}) == 1.0);
}

TEST_CASE("MMD estimator matches a direct double sum") {
  const std::vector<double> a{0.0, 0.5, 2.0}, b{1.0, -1.0};
  const double h = 0.7;
  auto k = [&](double x, double y) { return std::exp(-(x - y) * (x - y) / (2 * h * h)); };
  double xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) xx += k(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) yy += k(b[i], b[j]);
  for (double x : a)
    for (double y : b) xy += k(x, y);
  const double oracle = xx / 6.0 + yy / 2.0 - 2.0 * xy / 6.0;
  CHECK(mmd_squared(a, b, h) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("TV histogram") {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4}, b{10.1, 10.2, 10.3, 10.4};
  CHECK(tv_histogram(a, a, 10) == 0.0);
  CHECK(tv_histogram(a, b, 10) == doctest::Approx(1.0));
  // with an explicit range, out-of-range mass lands in overflow bins
  CHECK(tv_histogram(a, {0.1, 0.2, 50.0, 60.0}, 10, std::make_pair(0.0, 1.0)) == doctest::Approx(0.5));
  CHECK(tv_histogram({0.05, 0.15}, {0.05, 0.15}, 10, std::make_pair(0.0, 1.0)) == 0.0);
}

TEST_CASE("relative MAE of the squared-norm observable") {
  Mat truth(2, 1), a(2, 1);
  truth << 1.0, 3.0;  // E|x|^2 = 5
  a << 2.0, 2.0;      // E|x|^2 = 4
  CHECK(relative_mae(SampleSet(a), SampleSet(truth)) == doctest::Approx(0.2));
}

TEST_CASE("sample set validation") {
  Mat m(2, 2);
  m << 1, 2, std::nan(""), 4;
  CHECK_THROWS_AS(SampleSet(m).validate(), std::invalid_argument);
  CHECK(SampleSet::finite_rows(m).size() == 1);
}

TEST_CASE("Pareto front equals brute-force non-dominated set on 20-point clouds") {
  Rng rng(8, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ParetoPoint> pts;
    for (int i = 0; i < 20; ++i) pts.push_back({std::floor(8 * rng.uniform()), std::floor(8 * rng.uniform()), {}});
    std::vector<std::pair<double, double>> brute;
    for (const auto& p : pts) {
      bool dominated = false;
      for (const auto& q : pts)
        if (q.cost <= p.cost && q.value <= p.value && (q.cost < p.cost || q.value < p.value)) dominated = true;
      if (!dominated && std::find(brute.begin(), brute.end(), std::make_pair(p.cost, p.value)) == brute.end())
        brute.emplace_back(p.cost, p.value);
    }
    std::sort(brute.begin(), brute.end());
    const auto front = pareto_front(pts).front;
    REQUIRE(front.size() == brute.size());
    for (std::size_t i = 0; i < front.size(); ++i) {
      CHECK(front[i].cost == brute[i].first);
      CHECK(front[i].value == brute[i].second);
      if (i > 0) CHECK(front[i].value < front[i - 1].value);
    }
  }
}

TEST_CASE("hypervolume hand cases") {
  CHECK(hypervolume({{0.5, 0.5}}) == doctest::Approx(0.36));
  // union of [0,1.1]x[1,1.1] and [1,1.1]x[0,1.1]: 0.11 + 0.11 - 0.01
  CHECK(hypervolume({{0.0, 1.0}, {1.0, 0.0}}) == doctest::Approx(0.21));
  CHECK(hypervolume({{0.0, 0.0}}) == doctest::Approx(1.21));
  // dominated and out-of-range points add nothing
  CHECK(hypervolume({{0.5, 0.5}, {0.7, 0.7}, {2.0, 0.0}}) == doctest::Approx(0.36));
  CHECK(hypervolume({}) == 0.0);
}

TEST_CASE("hypervolume agrees with grid counting on random fronts") {
  Rng rng(9, 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 20; ++i) pts.emplace_back(rng.uniform(), rng.uniform());
    const int n = 1100;
    int hit = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = (i + 0.5) * 1.1 / n, y = (j + 0.5) * 1.1 / n;
        for (const auto& p : pts)
          if (p.first <= x && p.second <= y) {
            ++hit;
            break;
          }
      }
    CHECK(hypervolume(pts) == doctest::Approx(hit * (1.1 / n) * (1.1 / n)).epsilon(5e-3));
  }
}

TEST_CASE("HVR reflects dominance") {
  const std::vector<ParetoPoint> good{{1, 0.2, "a"}, {10, 0.1, "a"}}, bad{{1, 0.9, "b"}, {10, 0.5, "b"}};
  const auto hv = hypervolume_ratio({good, bad});
  CHECK(hv[0] == doctest::Approx(1.0));
  CHECK(hv[1] < hv[0]);
  // a single shared point on both axes maps to the centre
  const auto same = hypervolume_ratio({{{5, 0.3, "x"}}, {{5, 0.3, "y"}}});
  CHECK(same[0] == doctest::Approx(1.0));
  CHECK(same[1] == doctest::Approx(1.0));
}

TEST_CASE("percentile is the linear-interpolation estimator") {
  CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile({10, 0}, 0.05) == doctest::Approx(0.5));
  CHECK(percentile({7}, 0.95) == 7.0);
}

TEST_CASE("bootstrap front") {
  SUBCASE("one method, one budget gives a single-point front") {
    const ParetoRecord r = bootstrap_front({{100, {0.5, 0.5, 0.5}, "m"}}, 50, 1);
    REQUIRE(r.grid.size() == 1);
    CHECK(r.median[0] == 0.5);
    CHECK(r.p5[0] == 0.5);
    CHECK(r.p95[0] == 0.5);
  }
  SUBCASE("bands bracket the median and the step function is non-increasing") {
    const ParetoRecord r = bootstrap_front({{100, {0.9, 1.1, 1.0}, "a"}, {200, {0.5, 0.7, 0.6}, "b"},
                                            {200, {0.8, 0.9, 1.0}, "c"}, {400, {0.55, 0.65, 0.75}, "d"}},
                                           200, 2);
    REQUIRE(r.grid == std::vector<double>{100, 200, 400});
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r.p5[i] <= r.median[i]);
      CHECK(r.median[i] <= r.p95[i]);
      if (i > 0) CHECK(r.median[i] <= r.median[i - 1]);
    }
    CHECK(r.median[0] == doctest::Approx(1.0).epsilon(0.1));
  }
}

TEST_CASE("value_at is the best value at or below a cost") {
  const ParetoRecord r = pareto_front({{1, 3, {}}, {2, 2, {}}, {5, 1, {}}});
  CHECK(std::isinf(r.value_at(0.5)));
  CHECK(r.value_at(1) == 3);
  CHECK(r.value_at(4.9) == 2);
  CHECK(r.value_at(100) == 1);
}
