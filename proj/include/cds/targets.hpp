#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cds/rng.hpp"

namespace cds {

using Mat = Eigen::MatrixXd;

/// Value and gradient of a log-density at one point.
struct Evaluation {
  double log_density = 0.0;
  Vec score;
};

/// Unnormalized target density with an analytic score.
///
/// Every call to log_density(), score() or the fused evaluate() counts as
/// exactly one density evaluation. Samplers use the fused call, so a
/// value+score pair costs one unit of budget everywhere. The counter is
/// atomic and may be bumped from concurrently running chains.
class Target {
 public:
  explicit Target(std::size_t dim);
  virtual ~Target() = default;
  Target(const Target&) = delete;
  Target& operator=(const Target&) = delete;

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

  double log_density(const Vec& x) const;
  Vec score(const Vec& x) const;
  Evaluation evaluate(const Vec& x) const;
  /// Fused evaluation into caller-owned storage; `grad` is resized if needed.
  double evaluate_into(const Vec& x, Vec& grad) const;

  /// Log-density without touching the counter. Reserved for metrics, whose
  /// cost is accounted separately from sampler budgets.
  double log_density_uncounted(const Vec& x) const;

  [[nodiscard]] std::uint64_t evaluations() const noexcept { return evals_.load(std::memory_order_relaxed); }
  void reset_evaluations() noexcept { evals_.store(0, std::memory_order_relaxed); }

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual nlohmann::json to_json() const = 0;

 protected:
  virtual double log_density_impl(const Vec& x) const = 0;
  virtual double evaluate_impl(const Vec& x, Vec& grad) const = 0;

 private:
  void check_dim(const Vec& x) const;
  void count() const noexcept { evals_.fetch_add(1, std::memory_order_relaxed); }

  std::size_t dim_;
  mutable std::atomic<std::uint64_t> evals_{0};
};

/// Isotropic Gaussian N(mean, std^2 I), normalized.
class GaussianTarget final : public Target {
 public:
  GaussianTarget(Vec mean, double std);
  static std::shared_ptr<GaussianTarget> standard(std::size_t dim);

  const Vec& mean() const noexcept { return mean_; }
  double std_dev() const noexcept { return std_; }
  Vec sample(Rng& rng) const;

  std::string name() const override { return "gaussian"; }
  nlohmann::json to_json() const override;

 protected:
  double log_density_impl(const Vec& x) const override;
  double evaluate_impl(const Vec& x, Vec& grad) const override;

 private:
  Vec mean_;
  double std_;
  double log_norm_;
};

/// Finite mixture of Gaussians with SPD covariances.
class GaussianMixtureTarget final : public Target {
 public:
  GaussianMixtureTarget(std::vector<Vec> means, std::vector<Mat> covariances, Vec weights, std::string name = "gm");

  std::size_t components() const noexcept { return means_.size(); }
  const std::vector<Vec>& means() const noexcept { return means_; }
  const std::vector<Mat>& covariances() const noexcept { return covs_; }
  const Vec& weights() const noexcept { return weights_; }

  /// Exact draw from the mixture.
  Vec sample(Rng& rng) const;
  /// Index of the component mean closest to x (Euclidean).
  std::size_t nearest_component(const Vec& x) const;

  std::string name() const override { return name_; }
  nlohmann::json to_json() const override;
  static std::shared_ptr<GaussianMixtureTarget> from_json(const nlohmann::json& j);

 protected:
  double log_density_impl(const Vec& x) const override;
  double evaluate_impl(const Vec& x, Vec& grad) const override;

 private:
  struct Component {
    Eigen::LLT<Mat> chol;
    Mat precision;
    Vec inv_var;  // non-empty iff the covariance is diagonal
    double log_coef;  // log w + log normalizer
  };
  double component_log(std::size_t k, const Vec& x, Vec* grad) const;

  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  Vec weights_;
  std::vector<Component> comps_;
  std::string name_;
};

/// Sum over pairs of 4 eps [(sigma/r)^12 - (sigma/r)^6] for x holding N
/// particles as consecutive (x, y, z) triples. Coincident particles give +inf.
double lj_energy(const Vec& x, double epsilon = 1.0, double sigma = 1.0);

/// Boltzmann density exp(-E) of a Lennard-Jones cluster.
///
/// E is the pair potential plus an optional harmonic term
/// (c/2) sum_i |x_i - mean(x)|^2 that keeps the cluster bound; c = 0 gives
/// the bare potential. Both parts are invariant to permutation, translation
/// and rotation.
class LennardJonesTarget final : public Target {
 public:
  struct Params {
    std::size_t n_particles = 13;
    double epsilon = 1.0;
    double sigma = 1.0;
    double oscillator = 1.0;
  };
  explicit LennardJonesTarget(Params p);

  const Params& params() const noexcept { return p_; }
  double energy(const Vec& x) const;

  std::string name() const override { return "lj" + std::to_string(p_.n_particles); }
  nlohmann::json to_json() const override;

 protected:
  double log_density_impl(const Vec& x) const override;
  double evaluate_impl(const Vec& x, Vec& grad) const override;

 private:
  Params p_;
};

/// Gaussian reference N(mean, std^2 I) used to anchor annealing and
/// conditional paths. Exact sampling and a normalized log-density.
struct ReferenceDistribution {
  Vec mean;
  double std = 1.0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  Vec sample(Rng& rng) const;
  double log_density(const Vec& x) const;
  Vec score(const Vec& x) const;
};

struct ModeSearch {
  Vec mode;
  std::size_t steps = 0;
  bool diverged = false;
};

/// Gradient ascent on the target log-density: x <- x + lr * score(x),
/// with the step length capped at `max_step`. Counts one evaluation per
/// iteration. On a non-finite iterate the search stops and returns the last
/// finite point with `diverged` set.
ModeSearch find_mode(const Target& target, const Vec& x_init, std::size_t steps, double lr = 0.1,
                     double max_step = std::numeric_limits<double>::infinity());

/// Layout rule for the benchmark mixtures: `components` unit-covariance
/// components with means drawn i.i.d. uniform in [-half_width, half_width]^dim
/// from `seed`; weights uniform or proportional to 1..K.
std::shared_ptr<GaussianMixtureTarget> make_mixture(std::size_t dim, std::size_t components, double half_width,
                                                    bool non_uniform, std::uint64_t seed, std::string name);

/// Named benchmark targets: "GM-2", "GMNU-2", "GM-16", "GMNU-16", "LJ-13",
/// "LJ-55", "GAUSS-<d>". Throws std::invalid_argument for unknown ids.
std::shared_ptr<Target> make_task(const std::string& id);

}  // namespace cds
