#pragma once

#include <memory>

#include "cds/targets.hpp"

namespace cds {

/// Smallest admissible time for maps that need the inverse. The conditional
/// map collapses onto the anchor at t = 0, so every velocity and score
/// diverges there.
inline constexpr double kTimeFloor = 1e-4;

/// A conditional interpolant F_{t|z}: a family of diffeomorphisms with
/// F_{0|z} = z and F_{1|z} = identity.
class Interpolant {
 public:
  virtual ~Interpolant() = default;

  [[nodiscard]] virtual const Vec& anchor() const noexcept = 0;

  virtual Vec forward(double t, const Vec& x) const = 0;
  virtual Vec inverse(double t, const Vec& y) const = 0;
  /// d/dt F_{t|z}(x) at fixed x.
  virtual Vec time_derivative(double t, const Vec& x) const = 0;
  /// Jacobian of x -> F_{t|z}(x).
  virtual Mat jacobian(double t, const Vec& x) const = 0;
  virtual double log_abs_det_jacobian(double t, const Vec& x) const = 0;
  virtual Vec grad_log_abs_det_jacobian(double t, const Vec& x) const = 0;

  /// Score of the pushforward density at y given the target score at the
  /// preimage F^{-1}(y). Subclasses may override with a closed form.
  virtual Vec conditional_score(double t, const Vec& y, const Vec& target_score) const {
    return general_conditional_score(t, y, target_score);
  }

  /// Velocity of the conditional flow, d/dt F evaluated at F^{-1}(y).
  virtual Vec velocity(double t, const Vec& y) const { return time_derivative(t, inverse(t, y)); }

  /// J^{-T} score - grad log|det J|, both at the preimage of y.
  Vec general_conditional_score(double t, const Vec& y, const Vec& target_score) const;
};

/// F_{t|z}(x) = (1 - t) z + t x.
class LinearInterpolant final : public Interpolant {
 public:
  explicit LinearInterpolant(Vec z) : z_(std::move(z)) {}

  const Vec& anchor() const noexcept override { return z_; }

  Vec forward(double t, const Vec& x) const override;
  Vec inverse(double t, const Vec& y) const override;
  Vec time_derivative(double t, const Vec& x) const override;
  Mat jacobian(double t, const Vec& x) const override;
  double log_abs_det_jacobian(double t, const Vec& x) const override;
  Vec grad_log_abs_det_jacobian(double t, const Vec& x) const override;
  Vec conditional_score(double t, const Vec& y, const Vec& target_score) const override;
  Vec velocity(double t, const Vec& y) const override;

  /// In-place inverse without allocation; `out` must not alias `y`.
  void inverse_into(double t, const Vec& y, Vec& out) const;

 private:
  Vec z_;
};

/// Throws std::domain_error unless t lies in [kTimeFloor, 1].
void require_time(double t);

/// The conditional law nu_{t|z} = F_{t|z} # nu of a target under an
/// interpolant. Every density or score query costs exactly one target
/// evaluation; velocity() costs none.
class ConditionalPath {
 public:
  ConditionalPath(const Target& target, std::shared_ptr<const Interpolant> interpolant);
  ConditionalPath(const Target& target, const Vec& z);

  const Target& target() const noexcept { return *target_; }
  const Interpolant& interpolant() const noexcept { return *interp_; }
  const Vec& anchor() const noexcept { return interp_->anchor(); }
  std::size_t dim() const noexcept { return target_->dim(); }

  /// log pi~(F^{-1}(x)) - log|det J F|. Unnormalized, like the target.
  double log_density(double t, const Vec& x) const;
  Vec score(double t, const Vec& x) const;
  /// Fused log-density and score, one evaluation.
  double evaluate_into(double t, const Vec& x, Vec& score) const;

  Vec velocity(double t, const Vec& x) const;
  /// u_{t|z}(x) + (sigma^2 / 2) * score_{t|z}(x); one evaluation.
  Vec drift(double t, const Vec& x, double sigma) const;
  /// Same drift from an already known conditional score; no evaluation.
  Vec drift(double t, const Vec& x, double sigma, const Vec& cond_score) const;

 private:
  const Target* target_;
  std::shared_ptr<const Interpolant> interp_;
  const LinearInterpolant* linear_ = nullptr;
};

}  // namespace cds
