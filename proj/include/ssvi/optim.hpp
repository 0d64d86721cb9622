#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ssvi/errors.hpp"
#include "ssvi/expfam.hpp"
#include "ssvi/linalg.hpp"

namespace ssvi {

/// Step-size schedule for natural-gradient updates; one_over_t emits
/// 1/(t+t0) starting at t=1 so the first step is a pure fixed-point step.
class StepSchedule {
 public:
  static StepSchedule one_over_t(double t0 = 0.0) {
    StepSchedule s;
    s.constant_ = false;
    s.t0_ = t0;
    return s;
  }

  static StepSchedule constant(double rho) {
    if (!(rho > 0.0) || rho > 1.0) throw Error("StepSchedule: rho must be in (0,1]");
    StepSchedule s;
    s.constant_ = true;
    s.rho_ = rho;
    return s;
  }

  double peek() const { return constant_ ? rho_ : 1.0 / (t_ + t0_); }

  double next() {
    const double rho = peek();
    ++t_;
    return rho;
  }

 private:
  bool constant_ = true;
  double rho_ = 1.0;
  double t0_ = 0.0;
  long t_ = 1;
};

/// Per-coordinate ADAGRAD accumulator.
/// delta_j = eta * g_j / (eps + sqrt(acc_j + g_j^2)), then acc_j += g_j^2.
class AdagradState {
 public:
  explicit AdagradState(Eigen::Index n, double eta = 1.0, double eps = 1e-8)
      : acc_(VectorXd::Zero(n)), eta_(eta), eps_(eps) {}

  VectorXd step(const VectorXd& grad) {
    if (grad.size() != acc_.size()) throw DimensionError("AdagradState: gradient size mismatch");
    if (!grad.allFinite()) throw Error("AdagradState: gradient has NaN/Inf entries");
    VectorXd delta(grad.size());
    for (Eigen::Index j = 0; j < grad.size(); ++j) {
      const double g2 = grad[j] * grad[j];
      delta[j] = eta_ * grad[j] / (eps_ + std::sqrt(acc_[j] + g2));
      acc_[j] += g2;
    }
    return delta;
  }

  MatrixXd step(const MatrixXd& grad) {
    const VectorXd flat = Eigen::Map<const VectorXd>(grad.data(), grad.size());
    const VectorXd d = step(flat);
    return Eigen::Map<const MatrixXd>(d.data(), grad.rows(), grad.cols());
  }

  const VectorXd& accumulator() const { return acc_; }
  double eta() const { return eta_; }

 private:
  VectorXd acc_;
  double eta_;
  double eps_;
};

/// Stochastic natural-gradient blend (1-rho) theta_q + rho F_hat.
inline NaturalParams natural_blend(const NaturalParams& theta_q, const NaturalParams& f_hat,
                                   double rho) {
  if (theta_q.theta1.size() != f_hat.theta1.size() ||
      theta_q.theta2.rows() != f_hat.theta2.rows()) {
    throw DimensionError("natural_blend: shape mismatch");
  }
  if (!(rho > 0.0) || rho > 1.0) throw Error("natural_blend: rho must be in (0,1]");
  return {(1.0 - rho) * theta_q.theta1 + rho * f_hat.theta1,
          (1.0 - rho) * theta_q.theta2 + rho * f_hat.theta2};
}

inline double natural_blend(double theta_q, double f_hat, double rho) {
  if (!(rho > 0.0) || rho > 1.0) throw Error("natural_blend: rho must be in (0,1]");
  return (1.0 - rho) * theta_q + rho * f_hat;
}

/// Projection onto the positive semi-definite cone: symmetrize, then clamp
/// negative eigenvalues at zero.
inline MatrixXd psd_project(const MatrixXd& m) {
  if (!m.allFinite()) throw Error("psd_project: non-finite entries");
  if (m.rows() == 0) return m;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
  const VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  return symmetrize(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

/// Gradient step on an upper-triangular Cholesky factor. The step direction
/// is masked with triu(); if any diagonal entry would become nonpositive the
/// step size is halved, up to 30 times.
inline MatrixXd cholesky_grad_step(const MatrixXd& chol_upper, const MatrixXd& grad, double rho) {
  if (grad.rows() != chol_upper.rows() || grad.cols() != chol_upper.cols()) {
    throw DimensionError("cholesky_grad_step: gradient shape mismatch");
  }
  const MatrixXd dir = triu(grad);
  double step = rho;
  for (int attempt = 0; attempt <= 30; ++attempt) {
    MatrixXd cand = chol_upper + step * dir;
    if ((cand.diagonal().array() > 0.0).all()) return cand;
    step *= 0.5;
  }
  throw StepRejected("cholesky_grad_step: backtracking exhausted");
}

/// Update engine selection shared by the model families.
enum class Engine { mcssvi, sdsvi, hmcssvi };

inline Engine parse_engine(const std::string& name) {
  if (name == "mcssvi") return Engine::mcssvi;
  if (name == "sdsvi") return Engine::sdsvi;
  if (name == "hmcssvi") return Engine::hmcssvi;
  throw Error("unknown engine: " + name);
}

/// A standard-gradient step rule: either a plain step size or an ADAGRAD
/// state owned by the caller.
struct StandardStep {
  double rho = 0.0;
  AdagradState* adagrad = nullptr;

  static StandardStep fixed(double rho) { return {rho, nullptr}; }
  static StandardStep driven(AdagradState& st) { return {0.0, &st}; }

  VectorXd apply(const VectorXd& grad) const {
    return adagrad ? adagrad->step(grad) : VectorXd(rho * grad);
  }
  MatrixXd apply(const MatrixXd& grad) const {
    return adagrad ? adagrad->step(grad) : MatrixXd(rho * grad);
  }
  /// Step *size* for directions that backtrack (Cholesky); ADAGRAD-driven
  /// callers pre-scale the gradient instead.
  double size() const { return rho; }
};

/// Counters for guard events during training.
struct GuardLog {
  long projections = 0;  // data term projected to keep a precision PD
  long rejections = 0;   // steps rejected outright
  long skipped = 0;      // per-example terms skipped (underflow)
};

/// Natural-gradient precision blend with a lazily applied PSD projection:
/// the raw update is used when it stays positive definite, otherwise the
/// data term is projected onto the PSD cone and the event is logged.
inline MatrixXd blend_precision_guarded(const MatrixXd& prec_old, const MatrixXd& prior_prec,
                                        const MatrixXd& data_term, double rho,
                                        GuardLog* log = nullptr) {
  MatrixXd cand = symmetrize((1.0 - rho) * prec_old + rho * (prior_prec + data_term));
  if (is_positive_definite(cand)) return cand;
  if (log) ++log->projections;
  cand = symmetrize((1.0 - rho) * prec_old + rho * (prior_prec + psd_project(data_term)));
  if (is_positive_definite(cand)) return cand;
  throw StepRejected("blend_precision_guarded: projected precision still indefinite");
}

}  // namespace ssvi
