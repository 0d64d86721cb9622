#pragma once

#include <vector>

#include <Eigen/Core>

#include "ssvi/dataio.hpp"
#include "ssvi/expfam.hpp"
#include "ssvi/likelihoods.hpp"
#include "ssvi/optim.hpp"

namespace ssvi {

using GlmData = DesignMatrixData;

struct GlmState {
  GaussianDist q;
  GaussianDist prior;
  LikelihoodModel lik;

  static GlmState init(Eigen::Index dim, const LikelihoodModel& lik, double init_var = 10.0) {
    return {GaussianDist::spherical(dim, VectorXd::Zero(dim), init_var),
            GaussianDist::standard(dim), lik};
  }

  double local_mean(const GlmData& data, Eigen::Index i) const {
    return data.mean_offset(i) + data.X.row(i).dot(q.mean());
  }
  double local_var(const GlmData& data, Eigen::Index i) const {
    const VectorXd h = data.X.row(i);
    return data.var_offset(i) + h.dot(q.cov() * h);
  }
};

using Minibatch = std::vector<Eigen::Index>;

inline Minibatch full_batch(Eigen::Index n) {
  Minibatch mb(n);
  for (Eigen::Index i = 0; i < n; ++i) mb[i] = i;
  return mb;
}

/// -KL(q||p) + sum_i E_{q(f_i)}[log p(y_i|f_i)]
inline double glm_vlb(const GlmState& state, const GlmData& data,
                      const GaussianExpectationEstimator& est) {
  double value = -kl_gaussian(state.q, state.prior);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double mi = state.local_mean(data, i);
    const double vi = state.local_var(data, i);
    const double y = data.y[i];
    value += est.stream(i).expect(mi, vi, [&](double f) { return state.lik.log_lik(y, f); });
  }
  return value;
}

namespace detail {

struct GlmTerms {
  VectorXd alpha;
  VectorXd gamma;
};

inline GlmTerms glm_terms(const GlmState& state, const GlmData& data, const Minibatch& mb,
                          const GaussianExpectationEstimator& est) {
  GlmTerms t;
  t.alpha.resize(mb.size());
  t.gamma.resize(mb.size());
  for (std::size_t k = 0; k < mb.size(); ++k) {
    const Eigen::Index i = mb[k];
    const double mi = state.local_mean(data, i);
    const double vi = state.local_var(data, i);
    auto [a, g] = alpha_gamma_terms(state.lik, data.y[i], mi, vi, est.stream(i));
    t.alpha[k] = a;
    t.gamma[k] = g;
  }
  return t;
}

}  // namespace detail

/// S^-1 <- (1-rho) S^-1 + rho (Sigma^-1 - 2 N/|M| sum gamma_i h_i h_i^T)
inline GlmState mcssvi_cov_update(const GlmState& state, const GlmData& data, const Minibatch& mb,
                                  double rho, const GaussianExpectationEstimator& est,
                                  GuardLog* log = nullptr) {
  // empty minibatch degenerates to a prior blend
  const double scale = mb.empty() ? 0.0 : static_cast<double>(data.size()) / mb.size();
  const auto terms = detail::glm_terms(state, data, mb, est);
  MatrixXd data_term = MatrixXd::Zero(state.q.dim(), state.q.dim());
  for (std::size_t k = 0; k < mb.size(); ++k) {
    const VectorXd h = data.X.row(mb[k]);
    data_term.noalias() += -2.0 * scale * terms.gamma[k] * h * h.transpose();
  }
  const MatrixXd prec =
      blend_precision_guarded(state.q.precision(), state.prior.precision(), data_term, rho, log);
  const MatrixXd cov = spd_inverse(prec);
  return {GaussianDist::from_moments(state.q.mean(), cov), state.prior, state.lik};
}

/// S^-1 m <- (1-rho) S^-1 m + rho (Sigma^-1 mu + N/|M| sum (alpha_i - 2 (m^T h_i) gamma_i) h_i)
inline GlmState mcssvi_mean_update(const GlmState& state, const GlmData& data, const Minibatch& mb,
                                   double rho, const GaussianExpectationEstimator& est) {
  const double scale = mb.empty() ? 0.0 : static_cast<double>(data.size()) / mb.size();
  const auto terms = detail::glm_terms(state, data, mb, est);
  VectorXd target = state.prior.precision() * state.prior.mean();
  for (std::size_t k = 0; k < mb.size(); ++k) {
    const Eigen::Index i = mb[k];
    const VectorXd h = data.X.row(i);
    const double proj = state.q.mean().dot(h);
    target += scale * (terms.alpha[k] - 2.0 * proj * terms.gamma[k]) * h;
  }
  const VectorXd theta1 = (1.0 - rho) * (state.q.precision() * state.q.mean()) + rho * target;
  return {GaussianDist(state.q.cov() * theta1, state.q.chol()), state.prior, state.lik};
}

/// Standard gradient of the VLB in the variational mean.
inline VectorXd glm_mean_gradient(const GlmState& state, const GlmData& data, const Minibatch& mb,
                                  const GaussianExpectationEstimator& est) {
  const double scale = mb.empty() ? 0.0 : static_cast<double>(data.size()) / mb.size();
  const auto terms = detail::glm_terms(state, data, mb, est);
  VectorXd grad = state.prior.precision() * (state.prior.mean() - state.q.mean());
  for (std::size_t k = 0; k < mb.size(); ++k) {
    grad += scale * terms.alpha[k] * data.X.row(mb[k]).transpose();
  }
  return grad;
}

/// Standard gradient of the VLB in the upper Cholesky factor.
inline MatrixXd glm_chol_gradient(const GlmState& state, const GlmData& data, const Minibatch& mb,
                                  const GaussianExpectationEstimator& est) {
  const double scale = mb.empty() ? 0.0 : static_cast<double>(data.size()) / mb.size();
  const auto terms = detail::glm_terms(state, data, mb, est);
  const MatrixXd& c = state.q.chol();
  MatrixXd grad = MatrixXd::Zero(c.rows(), c.cols());
  grad.diagonal() = c.diagonal().cwiseInverse();
  grad -= c * state.prior.precision();
  MatrixXd data_term = MatrixXd::Zero(c.rows(), c.cols());
  for (std::size_t k = 0; k < mb.size(); ++k) {
    const VectorXd h = data.X.row(mb[k]);
    data_term.noalias() += 2.0 * scale * terms.gamma[k] * h * h.transpose();
  }
  grad += c * data_term;
  return triu(grad);
}

/// S-DSVI: simultaneous gradient steps on (mean, Cholesky).
inline GlmState sdsvi_updates(const GlmState& state, const GlmData& data, const Minibatch& mb,
                              double rho_mean, double rho_chol,
                              const GaussianExpectationEstimator& est) {
  const VectorXd grad_m = glm_mean_gradient(state, data, mb, est);
  const MatrixXd grad_c = glm_chol_gradient(state, data, mb, est);
  const VectorXd m = state.q.mean() + rho_mean * grad_m;
  const MatrixXd c = cholesky_grad_step(state.q.chol(), grad_c, rho_chol);
  return {GaussianDist(m, c), state.prior, state.lik};
}

/// H-MC-SSVI: natural-gradient covariance, ADAGRAD-driven standard mean step.
inline GlmState hmcssvi_step(const GlmState& state, const GlmData& data, const Minibatch& mb,
                             double rho_nat, AdagradState& adagrad,
                             const GaussianExpectationEstimator& est, GuardLog* log = nullptr) {
  GlmState s = mcssvi_cov_update(state, data, mb, rho_nat, est, log);
  const VectorXd delta = adagrad.step(glm_mean_gradient(s, data, mb, est));
  return {GaussianDist(s.q.mean() + delta, s.q.chol()), s.prior, s.lik};
}

/// Full MC-SSVI step: natural updates for covariance then mean.
inline GlmState mcssvi_step(const GlmState& state, const GlmData& data, const Minibatch& mb,
                            double rho, const GaussianExpectationEstimator& est,
                            GuardLog* log = nullptr) {
  GlmState s = mcssvi_cov_update(state, data, mb, rho, est, log);
  return mcssvi_mean_update(s, data, mb, rho, est);
}

}  // namespace ssvi
