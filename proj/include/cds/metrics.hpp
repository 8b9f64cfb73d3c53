#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cds/targets.hpp"

namespace cds {

struct SampleSet {
  Mat points;  // n x D
  std::optional<Vec> weights;
  std::string provenance;

  SampleSet() = default;
  explicit SampleSet(Mat p, std::string prov = {}) : points(std::move(p)), provenance(std::move(prov)) {}

  std::size_t size() const noexcept { return static_cast<std::size_t>(points.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(points.cols()); }
  Vec row(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }
  /// Throws std::invalid_argument on non-finite entries or bad weights.
  void validate() const;
  /// Rows whose entries are all finite.
  static SampleSet finite_rows(const Mat& m, std::string prov = {});
};

/// Largest set size handled by exact assignment; larger sets are subsampled.
inline constexpr std::size_t kExactAssignmentLimit = 2048;

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials). Returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(const Mat& cost);

/// Optimal superposition distance min_{R in SO(3), t} ||R x + t - y|| over
/// N x 3 configurations flattened row-wise.
double kabsch_rmsd(const Vec& x, const Vec& y);

/// Exact W2 between uniform empirical measures. Sets of unequal size, or
/// larger than kExactAssignmentLimit, are subsampled to a common size with a
/// fixed seed. With `align`, the pairwise cost is the squared Kabsch distance.
double wasserstein2(const SampleSet& a, const SampleSet& b, bool align = false, std::uint64_t subsample_seed = 7);

/// -log pi~(x) per row, uncounted. Adds the number of calls to
/// `measurement_ledger` when given.
std::vector<double> energies(const SampleSet& s, const Target& target, std::uint64_t* measurement_ledger = nullptr);

/// Median pairwise distance of the pooled values; 1 when that is zero.
double median_bandwidth(const std::vector<double>& a, const std::vector<double>& b);

/// Unbiased squared MMD with a Gaussian kernel of the given bandwidth. For
/// equal sizes the paired U-statistic is used, so identical inputs give 0.
double mmd_squared(const std::vector<double>& a, const std::vector<double>& b, double bandwidth);
/// Squared MMD on energies with the median-heuristic bandwidth.
double mmd_energy(const SampleSet& a, const SampleSet& b, const Target& target,
                  std::uint64_t* measurement_ledger = nullptr);

/// Half the L1 distance between normalized histograms. Bins span the pooled
/// min/max unless `range` is given, in which case values outside it fall
/// into an underflow or overflow bin.
double tv_histogram(const std::vector<double>& a, const std::vector<double>& b, std::size_t bins = 100,
                    std::optional<std::pair<double, double>> range = std::nullopt);
double tv_histogram(const SampleSet& a, const SampleSet& b, const Target& target, std::size_t bins = 100,
                    std::optional<std::pair<double, double>> range = std::nullopt,
                    std::uint64_t* measurement_ledger = nullptr);

using Observable = std::function<double(const Vec&)>;
double squared_norm_observable(const Vec& x);

/// |E_a f - E_truth f| / |E_truth f|.
double relative_mae(const SampleSet& a, const SampleSet& truth, const Observable& f = squared_norm_observable);

// ----------------------------------------------------------------- Pareto --

struct ParetoPoint {
  double cost = 0.0;
  double value = 0.0;
  std::string label;
};

struct ParetoRecord {
  std::vector<ParetoPoint> points;
  /// Non-dominated subset, cost ascending and value strictly descending.
  std::vector<ParetoPoint> front;
  /// Step-function grid and bands, filled by bootstrap_front.
  std::vector<double> grid;
  std::vector<double> median;
  std::vector<double> p5;
  std::vector<double> p95;

  /// Best value at cost <= c; +inf before the first front point.
  double value_at(double cost) const;
};

bool dominates(const ParetoPoint& p, const ParetoPoint& q);
ParetoRecord pareto_front(const std::vector<ParetoPoint>& points);

/// Area dominated by a point set and bounded by `ref`, minimization in both axes.
double hypervolume(const std::vector<std::pair<double, double>>& points, std::pair<double, double> ref = {1.1, 1.1});

/// Hypervolume ratio per method after joint min/max normalization to [0,1]^2.
/// An axis with zero range maps to 0.5.
std::vector<double> hypervolume_ratio(const std::vector<std::vector<ParetoPoint>>& fronts);

/// One config evaluated in several replicates, all at the same cost.
struct ReplicateGroup {
  double cost = 0.0;
  std::vector<double> values;
  std::string label;
};

/// Resamples each group's replicates with replacement, averages them and
/// builds a front per iteration. Returns the pointwise median step function
/// with 5th and 95th percentile bands on the grid of distinct costs.
ParetoRecord bootstrap_front(const std::vector<ReplicateGroup>& groups, std::size_t iterations, std::uint64_t seed);

/// Linear-interpolated percentile q in [0, 1] of unsorted values.
double percentile(std::vector<double> v, double q);

}  // namespace cds
