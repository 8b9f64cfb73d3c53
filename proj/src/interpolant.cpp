#include "cds/interpolant.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cds {

void require_time(double t) {
  if (!(t >= kTimeFloor && t <= 1.0))
    throw std::domain_error("conditional map is singular or undefined at t = " + std::to_string(t));
}

Vec Interpolant::general_conditional_score(double t, const Vec& y, const Vec& target_score) const {
  const Vec x = inverse(t, y);
  const Mat j = jacobian(t, x);
  return j.transpose().partialPivLu().solve(target_score) - grad_log_abs_det_jacobian(t, x);
}

// ------------------------------------------------------------ Linear map --

Vec LinearInterpolant::forward(double t, const Vec& x) const { return (1.0 - t) * z_ + t * x; }

Vec LinearInterpolant::inverse(double t, const Vec& y) const {
  require_time(t);
  return (y - (1.0 - t) * z_) / t;
}

void LinearInterpolant::inverse_into(double t, const Vec& y, Vec& out) const {
  require_time(t);
  out.resize(y.size());
  const double inv_t = 1.0 / t;
  const double c = 1.0 - t;
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = (y[i] - c * z_[i]) * inv_t;
}

Vec LinearInterpolant::time_derivative(double, const Vec& x) const { return x - z_; }

Mat LinearInterpolant::jacobian(double t, const Vec& x) const { return t * Mat::Identity(x.size(), x.size()); }

double LinearInterpolant::log_abs_det_jacobian(double t, const Vec& x) const {
  return static_cast<double>(x.size()) * std::log(t);
}

Vec LinearInterpolant::grad_log_abs_det_jacobian(double, const Vec& x) const { return Vec::Zero(x.size()); }

Vec LinearInterpolant::conditional_score(double t, const Vec&, const Vec& target_score) const {
  require_time(t);
  return target_score / t;
}

Vec LinearInterpolant::velocity(double t, const Vec& y) const {
  require_time(t);
  return (y - z_) / t;
}

// ------------------------------------------------------ ConditionalPath --

ConditionalPath::ConditionalPath(const Target& target, std::shared_ptr<const Interpolant> interpolant)
    : target_(&target), interp_(std::move(interpolant)) {
  if (!interp_) throw std::invalid_argument("conditional path needs an interpolant");
  if (static_cast<std::size_t>(interp_->anchor().size()) != target.dim())
    throw std::invalid_argument("anchor dimension does not match the target");
  linear_ = dynamic_cast<const LinearInterpolant*>(interp_.get());
}

ConditionalPath::ConditionalPath(const Target& target, const Vec& z)
    : ConditionalPath(target, std::make_shared<LinearInterpolant>(z)) {}

double ConditionalPath::log_density(double t, const Vec& x) const {
  const Vec y = interp_->inverse(t, x);
  return target_->log_density(y) - interp_->log_abs_det_jacobian(t, y);
}

Vec ConditionalPath::score(double t, const Vec& x) const {
  Vec s;
  evaluate_into(t, x, s);
  return s;
}

double ConditionalPath::evaluate_into(double t, const Vec& x, Vec& score) const {
  if (linear_) {
    thread_local Vec y;
    linear_->inverse_into(t, x, y);
    const double lp = target_->evaluate_into(y, score);
    score /= t;
    return lp - static_cast<double>(x.size()) * std::log(t);
  }
  const Vec y = interp_->inverse(t, x);
  Vec g;
  const double lp = target_->evaluate_into(y, g);
  score = interp_->conditional_score(t, x, g);
  return lp - interp_->log_abs_det_jacobian(t, y);
}

Vec ConditionalPath::velocity(double t, const Vec& x) const { return interp_->velocity(t, x); }

Vec ConditionalPath::drift(double t, const Vec& x, double sigma) const {
  Vec s;
  evaluate_into(t, x, s);
  return drift(t, x, sigma, s);
}

Vec ConditionalPath::drift(double t, const Vec& x, double sigma, const Vec& cond_score) const {
  return interp_->velocity(t, x) + 0.5 * sigma * sigma * cond_score;
}

}  // namespace cds
