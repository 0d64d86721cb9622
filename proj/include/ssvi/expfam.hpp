#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ssvi/errors.hpp"
#include "ssvi/linalg.hpp"
#include "ssvi/rng.hpp"

namespace ssvi {

/// Natural parameters of a multivariate Gaussian: (S^-1 m, 1/2 S^-1).
struct NaturalParams {
  VectorXd theta1;
  MatrixXd theta2;

  NaturalParams operator-(const NaturalParams& o) const {
    if (theta1.size() != o.theta1.size()) {
      throw DimensionError("NaturalParams: size mismatch");
    }
    return {theta1 - o.theta1, theta2 - o.theta2};
  }
};

/// Expectation parameters (h, H) = (m, -(S + m m^T)).
struct ExpectationParams {
  VectorXd h;
  MatrixXd H;
};

/// Multivariate Gaussian stored as mean plus upper-triangular Cholesky factor
/// C with S = C^T C. The natural and expectation views are computed once at
/// construction so values can be shared across threads without locking.
class GaussianDist {
 public:
  GaussianDist(VectorXd mean, MatrixXd chol_upper)
      : m_(std::move(mean)), chol_(std::move(chol_upper)) {
    if (chol_.rows() != chol_.cols() || chol_.rows() != m_.size()) {
      throw DimensionError("GaussianDist: mean/chol size mismatch");
    }
    for (Eigen::Index i = 0; i < chol_.rows(); ++i) {
      if (!(chol_(i, i) > 0.0)) {
        throw DegenerateCovariance("GaussianDist: Cholesky diagonal must be positive");
      }
      for (Eigen::Index j = 0; j < i; ++j) chol_(i, j) = 0.0;
    }
    sync_views();
  }

  static GaussianDist from_moments(const VectorXd& mean, const MatrixXd& cov) {
    return GaussianDist(mean, cholesky_upper(cov));
  }

  /// Reconstructs (m, S) from (S^-1 m, 1/2 S^-1).
  static GaussianDist from_natural(const VectorXd& theta1, const MatrixXd& theta2) {
    const MatrixXd prec = symmetrize(2.0 * theta2);
    const MatrixXd cov = spd_inverse(prec);
    return from_moments(cov * theta1, cov);
  }

  static GaussianDist standard(Eigen::Index dim) {
    return GaussianDist(VectorXd::Zero(dim), MatrixXd::Identity(dim, dim));
  }

  static GaussianDist spherical(Eigen::Index dim, const VectorXd& mean, double var) {
    return GaussianDist(mean, std::sqrt(var) * MatrixXd::Identity(dim, dim));
  }

  Eigen::Index dim() const { return m_.size(); }
  const VectorXd& mean() const { return m_; }
  const MatrixXd& chol() const { return chol_; }
  const MatrixXd& cov() const { return cov_; }
  const MatrixXd& precision() const { return prec_; }
  double log_det_cov() const { return log_det_cov_; }

  /// Condition estimate of S from the Cholesky diagonal spread.
  double condition_estimate() const {
    if (dim() == 0) return 1.0;
    const double hi = chol_.diagonal().maxCoeff();
    const double lo = chol_.diagonal().minCoeff();
    const double r = hi / lo;
    return r * r;
  }

  VectorXd sample(Rng& rng) const { return m_ + chol_.transpose() * rng.normal_vector(dim()); }

  double log_pdf(const VectorXd& x) const {
    if (x.size() != dim()) throw DimensionError("GaussianDist::log_pdf: size mismatch");
    if (dim() == 0) return 0.0;
    const VectorXd z = chol_.transpose().triangularView<Eigen::Lower>().solve(x - m_);
    return -0.5 * (dim() * std::log(2.0 * M_PI) + log_det_cov_ + z.squaredNorm());
  }

 private:
  void sync_views() {
    if (condition_estimate() > 1e12) {
      throw DegenerateCovariance("GaussianDist: covariance condition estimate above 1e12");
    }
    cov_ = symmetrize(chol_.transpose() * chol_);
    if (dim() == 0) {
      prec_ = cov_;
      log_det_cov_ = 0.0;
      return;
    }
    // S^-1 = C^-1 C^-T via triangular solves
    const MatrixXd cinv =
        chol_.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(dim(), dim()));
    prec_ = symmetrize(cinv * cinv.transpose());
    log_det_cov_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  VectorXd m_;
  MatrixXd chol_;
  MatrixXd cov_;
  MatrixXd prec_;
  double log_det_cov_ = 0.0;
};

/// Rayleigh distribution parameterized by scale-squared; natural parameter
/// -1/(2 sigma^2), expectation parameter 2 sigma^2.
class RayleighDist {
 public:
  explicit RayleighDist(double scale_sq) : scale_sq_(scale_sq) {
    if (!(scale_sq > 0.0) || !std::isfinite(scale_sq)) {
      throw Error("RayleighDist: scale-squared must be positive");
    }
  }

  static RayleighDist from_natural(double theta) {
    if (!(theta < 0.0)) throw Error("RayleighDist: natural parameter must be negative");
    return RayleighDist(-1.0 / (2.0 * theta));
  }

  double scale_sq() const { return scale_sq_; }
  double natural() const { return -1.0 / (2.0 * scale_sq_); }
  double expectation() const { return 2.0 * scale_sq_; }

  double sample(Rng& rng) const { return std::sqrt(scale_sq_) * rng.rayleigh1(); }

  double log_pdf(double x) const {
    if (x <= 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(x) - std::log(scale_sq_) - x * x / (2.0 * scale_sq_);
  }

 private:
  double scale_sq_;
};

inline NaturalParams to_natural(const GaussianDist& d) {
  if (d.condition_estimate() > 1e12) {
    throw DegenerateCovariance("to_natural: covariance condition estimate above 1e12");
  }
  return {d.precision() * d.mean(), 0.5 * d.precision()};
}

inline ExpectationParams to_expectation(const GaussianDist& d) {
  return {d.mean(), -(d.cov() + d.mean() * d.mean().transpose())};
}

inline double kl_gaussian(const GaussianDist& q, const GaussianDist& p) {
  if (q.dim() != p.dim()) throw DimensionError("kl_gaussian: dimension mismatch");
  if (q.dim() == 0) return 0.0;
  const VectorXd dm = p.mean() - q.mean();
  const double tr = (p.precision() * q.cov()).trace();
  const double quad = dm.dot(p.precision() * dm);
  return 0.5 * (tr + quad - q.dim() + p.log_det_cov() - q.log_det_cov());
}

inline double kl_rayleigh(const RayleighDist& q, const RayleighDist& p) {
  const double s2 = q.scale_sq();
  const double t2 = p.scale_sq();
  return std::log(t2 / s2) + s2 / t2 - 1.0;
}

/// d KL(q||p) / d eta_q = theta_q - theta_p.
inline NaturalParams kl_grad_wrt_expectation(const GaussianDist& q, const GaussianDist& p) {
  if (q.dim() != p.dim()) throw DimensionError("kl_grad_wrt_expectation: dimension mismatch");
  return to_natural(q) - to_natural(p);
}

inline double kl_grad_wrt_expectation(const RayleighDist& q, const RayleighDist& p) {
  return q.natural() - p.natural();
}

}  // namespace ssvi
