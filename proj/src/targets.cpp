#include "cds/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cds {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

Vec json_to_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

// ---------------------------------------------------------------- Target --

Target::Target(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("target dimension must be positive");
}

void Target::check_dim(const Vec& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_)
    throw std::invalid_argument("dimension mismatch: expected " + std::to_string(dim_) + ", got " +
                                std::to_string(x.size()));
}

double Target::log_density(const Vec& x) const {
  check_dim(x);
  count();
  return log_density_impl(x);
}

Vec Target::score(const Vec& x) const {
  check_dim(x);
  count();
  Vec g(static_cast<Eigen::Index>(dim_));
  evaluate_impl(x, g);
  return g;
}

Evaluation Target::evaluate(const Vec& x) const {
  Evaluation e;
  e.log_density = evaluate_into(x, e.score);
  return e;
}

double Target::evaluate_into(const Vec& x, Vec& grad) const {
  check_dim(x);
  count();
  if (grad.size() != x.size()) grad.resize(x.size());
  return evaluate_impl(x, grad);
}

double Target::log_density_uncounted(const Vec& x) const {
  check_dim(x);
  return log_density_impl(x);
}

// -------------------------------------------------------------- Gaussian --

GaussianTarget::GaussianTarget(Vec mean, double std)
    : Target(static_cast<std::size_t>(mean.size())), mean_(std::move(mean)), std_(std) {
  if (!(std_ > 0.0)) throw std::invalid_argument("gaussian std must be positive");
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * (kLog2Pi + 2.0 * std::log(std_));
}

std::shared_ptr<GaussianTarget> GaussianTarget::standard(std::size_t dim) {
  return std::make_shared<GaussianTarget>(Vec::Zero(static_cast<Eigen::Index>(dim)), 1.0);
}

Vec GaussianTarget::sample(Rng& rng) const { return mean_ + std_ * rng.normal_vec(mean_.size()); }

double GaussianTarget::log_density_impl(const Vec& x) const {
  return log_norm_ - 0.5 * (x - mean_).squaredNorm() / (std_ * std_);
}

double GaussianTarget::evaluate_impl(const Vec& x, Vec& grad) const {
  grad = (mean_ - x) / (std_ * std_);
  return log_norm_ - 0.5 * (x - mean_).squaredNorm() / (std_ * std_);
}

nlohmann::json GaussianTarget::to_json() const {
  return {{"kind", "gaussian"}, {"mean", vec_to_json(mean_)}, {"std", std_}};
}

// --------------------------------------------------------------- Mixture --

GaussianMixtureTarget::GaussianMixtureTarget(std::vector<Vec> means, std::vector<Mat> covariances, Vec weights,
                                             std::string name)
    : Target(means.empty() ? 0 : static_cast<std::size_t>(means.front().size())),
      means_(std::move(means)),
      covs_(std::move(covariances)),
      weights_(std::move(weights)),
      name_(std::move(name)) {
  const auto k = means_.size();
  if (covs_.size() != k || static_cast<std::size_t>(weights_.size()) != k)
    throw std::invalid_argument("mixture: means, covariances and weights must have equal length");
  if ((weights_.array() <= 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("mixture weights must be strictly positive and sum to 1");
  const auto d = static_cast<Eigen::Index>(dim());
  comps_.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (means_[i].size() != d || covs_[i].rows() != d || covs_[i].cols() != d)
      throw std::invalid_argument("mixture: inconsistent component dimensions");
    Component c;
    c.chol.compute(covs_[i]);
    if (c.chol.info() != Eigen::Success || !covs_[i].isApprox(covs_[i].transpose()))
      throw std::invalid_argument("mixture covariance is not symmetric positive definite");
    c.precision = c.chol.solve(Mat::Identity(d, d));
    const Mat off = covs_[i] - Mat(covs_[i].diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() == 0.0) c.inv_var = covs_[i].diagonal().cwiseInverse();
    const double log_det = 2.0 * c.chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
    c.log_coef = std::log(weights_[static_cast<Eigen::Index>(i)]) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
    comps_.push_back(std::move(c));
  }
}

double GaussianMixtureTarget::component_log(std::size_t k, const Vec& x, Vec* grad) const {
  const Component& c = comps_[k];
  const Vec& mu = means_[k];
  double quad = 0.0;
  if (c.inv_var.size() > 0) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double d = x[i] - mu[i];
      quad += d * d * c.inv_var[i];
      if (grad) (*grad)[i] = -d * c.inv_var[i];
    }
  } else {
    const Vec diff = x - mu;
    const Vec pd = c.precision * diff;
    quad = diff.dot(pd);
    if (grad) *grad = -pd;
  }
  return c.log_coef - 0.5 * quad;
}

double GaussianMixtureTarget::log_density_impl(const Vec& x) const {
  thread_local std::vector<double> logs;
  logs.resize(comps_.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps_.size(); ++k) {
    logs[k] = component_log(k, x, nullptr);
    m = std::max(m, logs[k]);
  }
  double s = 0.0;
  for (double l : logs) s += std::exp(l - m);
  return m + std::log(s);
}

double GaussianMixtureTarget::evaluate_impl(const Vec& x, Vec& grad) const {
  thread_local std::vector<double> logs;
  thread_local Vec g;
  logs.resize(comps_.size());
  g.resize(x.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps_.size(); ++k) {
    logs[k] = component_log(k, x, nullptr);
    m = std::max(m, logs[k]);
  }
  double s = 0.0;
  for (double& l : logs) {
    l = std::exp(l - m);
    s += l;
  }
  grad.setZero();
  for (std::size_t k = 0; k < comps_.size(); ++k) {
    const double r = logs[k] / s;
    if (r < 1e-300) continue;
    component_log(k, x, &g);
    grad += r * g;
  }
  return m + std::log(s);
}

Vec GaussianMixtureTarget::sample(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t k = comps_.size() - 1;
  for (std::size_t i = 0; i < comps_.size(); ++i) {
    acc += weights_[static_cast<Eigen::Index>(i)];
    if (u < acc) {
      k = i;
      break;
    }
  }
  const Vec xi = rng.normal_vec(static_cast<Eigen::Index>(dim()));
  return means_[k] + comps_[k].chol.matrixL() * xi;
}

std::size_t GaussianMixtureTarget::nearest_component(const Vec& x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < means_.size(); ++k) {
    const double d = (x - means_[k]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

nlohmann::json GaussianMixtureTarget::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t k = 0; k < means_.size(); ++k) {
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < covs_[k].rows(); ++r) cov.push_back(vec_to_json(covs_[k].row(r).transpose()));
    comps.push_back({{"weight", weights_[static_cast<Eigen::Index>(k)]}, {"mean", vec_to_json(means_[k])}, {"cov", cov}});
  }
  return {{"kind", "gaussian_mixture"}, {"name", name_}, {"dim", dim()}, {"components", comps}};
}

std::shared_ptr<GaussianMixtureTarget> GaussianMixtureTarget::from_json(const nlohmann::json& j) {
  std::vector<Vec> means;
  std::vector<Mat> covs;
  std::vector<double> w;
  for (const auto& c : j.at("components")) {
    means.push_back(json_to_vec(c.at("mean")));
    const auto& rows = c.at("cov");
    Mat cov(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) cov.row(static_cast<Eigen::Index>(r)) = json_to_vec(rows[r]).transpose();
    covs.push_back(std::move(cov));
    w.push_back(c.at("weight").get<double>());
  }
  Vec weights = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
  return std::make_shared<GaussianMixtureTarget>(std::move(means), std::move(covs), std::move(weights),
                                                 j.value("name", std::string("gm")));
}

// --------------------------------------------------------- Lennard-Jones --

double lj_energy(const Vec& x, double epsilon, double sigma) {
  if (x.size() % 3 != 0) throw std::invalid_argument("lj_energy: coordinate count not divisible by 3");
  const Eigen::Index n = x.size() / 3;
  const double s2 = sigma * sigma;
  double e = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double r2 = (x.segment<3>(3 * i) - x.segment<3>(3 * j)).squaredNorm();
      if (r2 == 0.0) return std::numeric_limits<double>::infinity();
      const double q6 = (s2 / r2) * (s2 / r2) * (s2 / r2);
      e += 4.0 * epsilon * (q6 * q6 - q6);
    }
  }
  return e;
}

LennardJonesTarget::LennardJonesTarget(Params p) : Target(3 * p.n_particles), p_(p) {
  if (p_.n_particles < 2) throw std::invalid_argument("Lennard-Jones needs at least two particles");
  if (!(p_.epsilon > 0.0) || !(p_.sigma > 0.0) || p_.oscillator < 0.0)
    throw std::invalid_argument("Lennard-Jones parameters must be positive");
}

double LennardJonesTarget::energy(const Vec& x) const {
  double e = lj_energy(x, p_.epsilon, p_.sigma);
  if (p_.oscillator > 0.0) {
    const auto pts = x.reshaped(3, static_cast<Eigen::Index>(p_.n_particles));
    const Eigen::Vector3d c = pts.rowwise().mean();
    e += 0.5 * p_.oscillator * (pts.colwise() - c).squaredNorm();
  }
  return e;
}

double LennardJonesTarget::log_density_impl(const Vec& x) const { return -energy(x); }

double LennardJonesTarget::evaluate_impl(const Vec& x, Vec& grad) const {
  const auto n = static_cast<Eigen::Index>(p_.n_particles);
  const double s2 = p_.sigma * p_.sigma;
  const double eps4 = 4.0 * p_.epsilon;
  grad.setZero();
  double e = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Eigen::Vector3d d = x.segment<3>(3 * i) - x.segment<3>(3 * j);
      const double r2 = d.squaredNorm();
      if (r2 == 0.0) {
        grad.setZero();
        return -std::numeric_limits<double>::infinity();
      }
      const double q6 = (s2 / r2) * (s2 / r2) * (s2 / r2);
      e += eps4 * (q6 * q6 - q6);
      // dE/dr * (1/r) = eps4 (-12 q12 + 6 q6) / r^2
      const double f = eps4 * (-12.0 * q6 * q6 + 6.0 * q6) / r2;
      grad.segment<3>(3 * i) -= f * d;
      grad.segment<3>(3 * j) += f * d;
    }
  }
  if (p_.oscillator > 0.0) {
    const auto pts = x.reshaped(3, n);
    const Eigen::Vector3d c = pts.rowwise().mean();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Vector3d d = pts.col(i) - c;
      e += 0.5 * p_.oscillator * d.squaredNorm();
      grad.segment<3>(3 * i) -= p_.oscillator * d;
    }
  }
  return -e;
}

nlohmann::json LennardJonesTarget::to_json() const {
  return {{"kind", "lennard_jones"},
          {"n_particles", p_.n_particles},
          {"epsilon", p_.epsilon},
          {"sigma", p_.sigma},
          {"oscillator", p_.oscillator}};
}

// ------------------------------------------------------------- Reference --

Vec ReferenceDistribution::sample(Rng& rng) const { return mean + std * rng.normal_vec(mean.size()); }

double ReferenceDistribution::log_density(const Vec& x) const {
  const double d = static_cast<double>(mean.size());
  return -0.5 * (x - mean).squaredNorm() / (std * std) - 0.5 * d * (kLog2Pi + 2.0 * std::log(std));
}

Vec ReferenceDistribution::score(const Vec& x) const { return (mean - x) / (std * std); }

// ------------------------------------------------------------- Mode find --

ModeSearch find_mode(const Target& target, const Vec& x_init, std::size_t steps, double lr, double max_step) {
  if (steps == 0) throw std::invalid_argument("find_mode: steps must be at least 1");
  ModeSearch out;
  out.mode = x_init;
  Vec x = x_init;
  Vec g;
  for (std::size_t k = 0; k < steps; ++k) {
    const double lp = target.evaluate_into(x, g);
    if (!std::isfinite(lp) || !g.allFinite()) {
      out.diverged = true;
      return out;
    }
    out.mode = x;
    out.steps = k;
    Vec step = lr * g;
    const double len = step.norm();
    if (len > max_step) step *= max_step / len;
    x += step;
    if (!x.allFinite()) {
      out.diverged = true;
      return out;
    }
  }
  out.mode = x;
  out.steps = steps;
  return out;
}

// ----------------------------------------------------------------- Tasks --

std::shared_ptr<GaussianMixtureTarget> make_mixture(std::size_t dim, std::size_t components, double half_width,
                                                    bool non_uniform, std::uint64_t seed, std::string name) {
  Rng rng(seed, 0);
  const auto d = static_cast<Eigen::Index>(dim);
  std::vector<Vec> means;
  std::vector<Mat> covs;
  Vec w(static_cast<Eigen::Index>(components));
  for (std::size_t k = 0; k < components; ++k) {
    Vec m(d);
    for (Eigen::Index i = 0; i < d; ++i) m[i] = rng.uniform(-half_width, half_width);
    means.push_back(std::move(m));
    covs.push_back(Mat::Identity(d, d));
    w[static_cast<Eigen::Index>(k)] = non_uniform ? static_cast<double>(k + 1) : 1.0;
  }
  w /= w.sum();
  return std::make_shared<GaussianMixtureTarget>(std::move(means), std::move(covs), std::move(w), std::move(name));
}

std::shared_ptr<Target> make_task(const std::string& id) {
  // Fixed seeds keep the layouts reproducible across runs and machines.
  if (id == "GM-2") return make_mixture(2, 8, 12.0, false, 20260201, id);
  if (id == "GMNU-2") return make_mixture(2, 8, 12.0, true, 20260201, id);
  if (id == "GM-16") return make_mixture(16, 8, 8.0, false, 20260216, id);
  if (id == "GMNU-16") return make_mixture(16, 8, 8.0, true, 20260216, id);
  if (id == "LJ-13") return std::make_shared<LennardJonesTarget>(LennardJonesTarget::Params{13, 1.0, 1.0, 1.0});
  if (id == "LJ-55") return std::make_shared<LennardJonesTarget>(LennardJonesTarget::Params{55, 1.0, 1.0, 1.0});
  if (id.rfind("GAUSS-", 0) == 0) return GaussianTarget::standard(std::stoul(id.substr(6)));
  throw std::invalid_argument("unknown task id: " + id);
}

}  // namespace cds
