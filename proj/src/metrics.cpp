#include "cds/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cds {

void SampleSet::validate() const {
  if (!points.allFinite()) throw std::invalid_argument("sample set has non-finite entries");
  if (weights) {
    if (static_cast<std::size_t>(weights->size()) != size()) throw std::invalid_argument("one weight per sample required");
    if ((weights->array() < 0.0).any() || std::abs(weights->sum() - 1.0) > 1e-9)
      throw std::invalid_argument("weights must lie on the simplex");
  }
}

SampleSet SampleSet::finite_rows(const Mat& m, std::string prov) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (m.row(i).allFinite()) keep.push_back(i);
  Mat out(static_cast<Eigen::Index>(keep.size()), m.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(keep[i]);
  return SampleSet(std::move(out), std::move(prov));
}

// ------------------------------------------------------------ Transport --

std::vector<std::size_t> solve_assignment(const Mat& cost) {
  const std::size_t n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw std::invalid_argument("assignment needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

double kabsch_rmsd(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw std::invalid_argument("kabsch_rmsd: size mismatch");
  if (x.size() % 3 != 0) throw std::invalid_argument("kabsch_rmsd: dimension must be a multiple of 3");
  const Eigen::Index n = x.size() / 3;
  if (n == 0) return 0.0;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
  RowMat a = Eigen::Map<const RowMat>(x.data(), n, 3);
  RowMat b = Eigen::Map<const RowMat>(y.data(), n, 3);
  a.rowwise() -= a.colwise().mean();
  b.rowwise() -= b.colwise().mean();
  const Eigen::Matrix3d h = a.transpose() * b;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  return (a * r.transpose() - b).norm();
}

namespace {

std::vector<Eigen::Index> pick_rows(std::size_t n, std::size_t k, Rng rng) {
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k >= n) return idx;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

double wasserstein2(const SampleSet& a, const SampleSet& b, bool align, std::uint64_t subsample_seed) {
  if (a.dim() != b.dim()) throw std::invalid_argument("wasserstein2: dimension mismatch");
  if (align && a.dim() % 3 != 0) throw std::invalid_argument("wasserstein2: aligned mode needs D divisible by 3");
  if (a.weights || b.weights) throw std::invalid_argument("wasserstein2: weighted sets are not supported");
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("wasserstein2: empty sample set");
  const std::size_t n = std::min({a.size(), b.size(), kExactAssignmentLimit});
  const auto ia = pick_rows(a.size(), n, Rng(subsample_seed, 1));
  const auto ib = pick_rows(b.size(), n, Rng(subsample_seed, 2));
  Mat cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Vec x = a.points.row(ia[i]).transpose();
    for (std::size_t j = 0; j < n; ++j) {
      const auto ei = static_cast<Eigen::Index>(i), ej = static_cast<Eigen::Index>(j);
      if (align) {
        const double r = kabsch_rmsd(x, b.points.row(ib[j]).transpose());
        cost(ei, ej) = r * r;
      } else {
        cost(ei, ej) = (a.points.row(ia[i]) - b.points.row(ib[j])).squaredNorm();
      }
    }
  }
  const auto match = solve_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(match[i]));
  return std::sqrt(std::max(0.0, total / static_cast<double>(n)));
}

// ------------------------------------------------------- Energy metrics --

std::vector<double> energies(const SampleSet& s, const Target& target, std::uint64_t* measurement_ledger) {
  std::vector<double> e(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) e[i] = -target.log_density_uncounted(s.row(i));
  if (measurement_ledger) *measurement_ledger += s.size();
  return e;
}

double median_bandwidth(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  std::vector<double> d;
  d.reserve(pool.size() * (pool.size() - 1) / 2);
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(std::abs(pool[i] - pool[j]));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 && std::isfinite(*mid) ? *mid : 1.0;
}

double mmd_squared(const std::vector<double>& a, const std::vector<double>& b, double bandwidth) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("mmd needs at least two samples per set");
  const double c = 1.0 / (2.0 * bandwidth * bandwidth);
  auto k = [c](double u, double v) { return std::exp(-c * (u - v) * (u - v)); };
  const std::size_t n = a.size(), m = b.size();
  if (n == m) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += k(a[i], a[j]) + k(b[i], b[j]) - k(a[i], b[j]) - k(a[j], b[i]);
    return s / (static_cast<double>(n) * static_cast<double>(n - 1));
  }
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) saa += k(a[i], a[j]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) sbb += k(b[i], b[j]);
  for (double u : a)
    for (double v : b) sab += k(u, v);
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return saa / (dn * (dn - 1)) + sbb / (dm * (dm - 1)) - 2.0 * sab / (dn * dm);
}

double mmd_energy(const SampleSet& a, const SampleSet& b, const Target& target, std::uint64_t* measurement_ledger) {
  const auto ea = energies(a, target, measurement_ledger);
  const auto eb = energies(b, target, measurement_ledger);
  return mmd_squared(ea, eb, median_bandwidth(ea, eb));
}

double tv_histogram(const std::vector<double>& a, const std::vector<double>& b, std::size_t bins,
                    std::optional<std::pair<double, double>> range) {
  if (bins < 2) throw std::invalid_argument("tv_histogram needs at least two bins");
  if (a.empty() || b.empty()) throw std::invalid_argument("tv_histogram needs non-empty inputs");
  double lo, hi;
  if (range) {
    lo = range->first;
    hi = range->second;
  } else {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const auto* v : {&a, &b})
      for (double x : *v)
        if (std::isfinite(x)) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
    if (!std::isfinite(lo)) lo = hi = 0.0;
  }
  // slots: underflow, bins..., overflow
  auto histogram = [&](const std::vector<double>& v) {
    std::vector<double> h(bins + 2, 0.0);
    for (double x : v) {
      std::size_t slot;
      if (std::isnan(x) || x > hi) slot = bins + 1;
      else if (x < lo) slot = 0;
      else if (hi == lo) slot = 1;
      else slot = 1 + std::min(bins - 1, static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins)));
      h[slot] += 1.0;
    }
    for (double& c : h) c /= static_cast<double>(v.size());
    return h;
  };
  const auto ha = histogram(a), hb = histogram(b);
  double tv = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) tv += std::abs(ha[i] - hb[i]);
  return 0.5 * tv;
}

double tv_histogram(const SampleSet& a, const SampleSet& b, const Target& target, std::size_t bins,
                    std::optional<std::pair<double, double>> range, std::uint64_t* measurement_ledger) {
  return tv_histogram(energies(a, target, measurement_ledger), energies(b, target, measurement_ledger), bins, range);
}

double squared_norm_observable(const Vec& x) { return x.squaredNorm(); }

double relative_mae(const SampleSet& a, const SampleSet& truth, const Observable& f) {
  auto mean = [&f](const SampleSet& s) {
    if (s.size() == 0) throw std::invalid_argument("relative_mae: empty sample set");
    double m = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) m += (s.weights ? (*s.weights)[static_cast<Eigen::Index>(i)] : 1.0) * f(s.row(i));
    return s.weights ? m : m / static_cast<double>(s.size());
  };
  const double mt = mean(truth);
  if (mt == 0.0) throw std::invalid_argument("relative_mae: zero expectation under the reference set");
  return std::abs(mean(a) - mt) / std::abs(mt);
}

// ----------------------------------------------------------------- Pareto --

bool dominates(const ParetoPoint& p, const ParetoPoint& q) {
  return p.cost <= q.cost && p.value <= q.value && (p.cost < q.cost || p.value < q.value);
}

ParetoRecord pareto_front(const std::vector<ParetoPoint>& points) {
  ParetoRecord r;
  r.points = points;
  std::vector<ParetoPoint> sorted = points;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return a.cost < b.cost || (a.cost == b.cost && a.value < b.value);
  });
  double best = std::numeric_limits<double>::infinity();
  for (const ParetoPoint& p : sorted)
    if (p.value < best) {
      r.front.push_back(p);
      best = p.value;
    }
  return r;
}

double ParetoRecord::value_at(double cost) const {
  double v = std::numeric_limits<double>::infinity();
  for (const ParetoPoint& p : front) {
    if (p.cost > cost) break;
    v = p.value;
  }
  return v;
}

double hypervolume(const std::vector<std::pair<double, double>>& points, std::pair<double, double> ref) {
  std::vector<ParetoPoint> inside;
  for (const auto& [x, y] : points)
    if (x < ref.first && y < ref.second) inside.push_back({x, y, {}});
  const auto front = pareto_front(inside).front;
  double hv = 0.0;
  for (std::size_t i = 0; i < front.size(); ++i) {
    const double next = i + 1 < front.size() ? front[i + 1].cost : ref.first;
    hv += (next - front[i].cost) * (ref.second - front[i].value);
  }
  return hv;
}

std::vector<double> hypervolume_ratio(const std::vector<std::vector<ParetoPoint>>& fronts) {
  if (fronts.empty()) throw std::invalid_argument("hypervolume_ratio needs at least one method");
  double cmin = std::numeric_limits<double>::infinity(), cmax = -cmin, vmin = cmin, vmax = -cmin;
  for (const auto& f : fronts) {
    if (f.empty()) throw std::invalid_argument("hypervolume_ratio needs at least one point per method");
    for (const ParetoPoint& p : f) {
      cmin = std::min(cmin, p.cost);
      cmax = std::max(cmax, p.cost);
      vmin = std::min(vmin, p.value);
      vmax = std::max(vmax, p.value);
    }
  }
  auto norm = [](double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.5; };
  std::vector<std::vector<std::pair<double, double>>> scaled(fronts.size());
  std::vector<std::pair<double, double>> pooled;
  for (std::size_t m = 0; m < fronts.size(); ++m)
    for (const ParetoPoint& p : fronts[m]) {
      scaled[m].emplace_back(norm(p.cost, cmin, cmax), norm(p.value, vmin, vmax));
      pooled.push_back(scaled[m].back());
    }
  const double ref_hv = hypervolume(pooled);
  std::vector<double> out;
  for (const auto& s : scaled) out.push_back(ref_hv > 0.0 ? hypervolume(s) / ref_hv : 0.0);
  return out;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= v.size()) return v.back();
  const double f = pos - static_cast<double>(i);
  return f == 0.0 ? v[i] : v[i] + f * (v[i + 1] - v[i]);
}

ParetoRecord bootstrap_front(const std::vector<ReplicateGroup>& groups, std::size_t iterations, std::uint64_t seed) {
  if (groups.empty()) throw std::invalid_argument("bootstrap_front needs at least one group");
  if (iterations == 0) throw std::invalid_argument("bootstrap_front needs at least one iteration");
  for (const ReplicateGroup& g : groups)
    if (g.values.empty()) throw std::invalid_argument("bootstrap_front: group without replicates");

  std::vector<ParetoPoint> means;
  for (const ReplicateGroup& g : groups) {
    double m = 0.0;
    for (double v : g.values) m += v;
    means.push_back({g.cost, m / static_cast<double>(g.values.size()), g.label});
  }
  ParetoRecord out = pareto_front(means);
  for (const ReplicateGroup& g : groups) out.grid.push_back(g.cost);
  std::sort(out.grid.begin(), out.grid.end());
  out.grid.erase(std::unique(out.grid.begin(), out.grid.end()), out.grid.end());

  Rng rng(seed, 0);
  std::vector<std::vector<double>> curves(out.grid.size());
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<ParetoPoint> pts;
    for (const ReplicateGroup& g : groups) {
      double m = 0.0;
      for (std::size_t r = 0; r < g.values.size(); ++r) m += g.values[rng.below(g.values.size())];
      pts.push_back({g.cost, m / static_cast<double>(g.values.size()), g.label});
    }
    const ParetoRecord f = pareto_front(pts);
    for (std::size_t i = 0; i < out.grid.size(); ++i) curves[i].push_back(f.value_at(out.grid[i]));
  }
  for (const auto& c : curves) {
    out.median.push_back(percentile(c, 0.5));
    out.p5.push_back(percentile(c, 0.05));
    out.p95.push_back(percentile(c, 0.95));
  }
  return out;
}

}  // namespace cds
