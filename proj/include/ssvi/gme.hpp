#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "ssvi/expfam.hpp"
#include "ssvi/glm.hpp"
#include "ssvi/likelihoods.hpp"
#include "ssvi/optim.hpp"
#include "ssvi/quadrature.hpp"

namespace ssvi {

using GmeData = GlmData;

/// Mixed-effects GLM: f_i | w ~ N(w1^T x_i, w2) with Gaussian q(w1) and
/// Rayleigh q(w2). The mean-field locals q(f_i) = N(beta_i, gamma_i^2) are
/// only populated by the mean-field routines.
struct GmeState {
  GaussianDist qw;
  RayleighDist qv;
  GaussianDist prior_w;
  RayleighDist prior_v;
  LikelihoodModel lik;
  VectorXd mf_beta;
  VectorXd mf_gamma;
  VectorXd mf_acc_beta;   // persistent ADAGRAD accumulators for the locals
  VectorXd mf_acc_gamma;

  static GmeState init(Eigen::Index dim, const LikelihoodModel& lik, double tau_sq = 25.0,
                       double init_var = 10.0, double init_sigma_sq = 1.0) {
    return {GaussianDist::spherical(dim, VectorXd::Zero(dim), init_var),
            RayleighDist(init_sigma_sq),
            GaussianDist::standard(dim),
            RayleighDist(tau_sq),
            lik,
            VectorXd(),
            VectorXd(),
            VectorXd(),
            VectorXd()};
  }
};

/// Monte Carlo configuration for the GME expectations: n_outer samples of
/// (w1, w2), n_inner samples of f per outer draw. The inner count defaults
/// high because the E'/E and E''/E ratios are biased at small sample sizes.
struct GmeEstimator {
  int n_outer = 10;
  int n_inner = 100;
  std::uint64_t seed = 0;

  GmeEstimator stream(std::uint64_t index) const {
    return {n_outer, n_inner, detail::splitmix64(seed ^ (index + 0xabcdef37))};
  }
};

/// Per-example gradient contributions. Scalar coefficients multiply x_i
/// (vector terms) or x_i x_i^T (matrix terms):
///   c_m  -> standard mean gradient, E[grad_w1 log phi] = c_m x
///   c_h  -> natural mean target, E[grad - hess m] = c_h x
///   c_H  -> E[hess scalar]; hess log phi = c_H x x^T
///   c_g  -> derivative w.r.t. the Rayleigh expectation parameter g
struct GmeGradTerms {
  double c_m = 0.0;
  double c_h = 0.0;
  double c_H = 0.0;
  double c_g = 0.0;
  long skipped = 0;

  VectorXd grad_h(const VectorXd& x) const { return c_h * x; }
  MatrixXd grad_H(const VectorXd& x) const { return -0.5 * c_H * x * x.transpose(); }
  double grad_g() const { return c_g; }
};

namespace detail {

/// One outer (w1, w2) draw shared across the optimal and suboptimal paths.
struct GmeOuterSample {
  VectorXd w1;
  double alpha;  // unit Rayleigh draw; w2 = alpha * sigma
  std::vector<double> eps;  // inner standard normals
};

inline std::vector<GmeOuterSample> gme_draw(const GaussianDist& qw, int n_outer, int n_inner,
                                            Rng& rng) {
  std::vector<GmeOuterSample> out(n_outer);
  for (auto& s : out) {
    s.w1 = qw.sample(rng);
    s.alpha = rng.rayleigh1();
    s.eps.resize(n_inner);
    for (double& e : s.eps) e = rng.normal();
  }
  return out;
}

}  // namespace detail

/// Gradient contributions for the structured bound built on
/// phi = E_f[p(y|f)] (optimal) or phi = E_f[log p(y|f)] (suboptimal).
inline GmeGradTerms gme_grad_terms(const GmeState& state, const VectorXd& x, double y,
                                   const std::vector<detail::GmeOuterSample>& samples,
                                   bool optimal) {
  GmeGradTerms t;
  const double sigma = std::sqrt(state.qv.scale_sq());
  const double sigma_sq = state.qv.scale_sq();
  long used = 0;
  for (const auto& s : samples) {
    const double w2 = s.alpha * sigma;
    const double mean_f = x.dot(s.w1);
    const double sd_f = std::sqrt(w2);
    double r1, hess, dw2;  // grad scalar, hessian scalar, d/dw2 of (log) phi
    if (optimal) {
      const int n = static_cast<int>(s.eps.size());
      const GmeTriple tr = detail::gme_triple_from_points(
          state.lik, y, n, [&](int i) { return mean_f + sd_f * s.eps[i]; }, nullptr);
      if (!tr.valid) {
        ++t.skipped;
        continue;
      }
      r1 = tr.r1;
      hess = tr.r2 - tr.r1 * tr.r1;
      dw2 = 0.5 * tr.r2;
    } else {
      double e1 = 0.0, e2 = 0.0;
      for (double eps : s.eps) {
        const LogLikDerivs d = state.lik.eval(y, mean_f + sd_f * eps);
        e1 += d.d1;
        e2 += d.d2;
      }
      e1 /= s.eps.size();
      e2 /= s.eps.size();
      r1 = e1;
      hess = e2;
      dw2 = 0.5 * e2;
    }
    t.c_m += r1;
    t.c_h += r1 - x.dot(state.qw.mean()) * hess;
    t.c_H += hess;
    t.c_g += (w2 / (4.0 * sigma_sq)) * dw2;
    ++used;
  }
  if (used > 0) {
    t.c_m /= used;
    t.c_h /= used;
    t.c_H /= used;
    t.c_g /= used;
  }
  return t;
}

inline GmeGradTerms gme_optimal_grad_terms(const GmeState& state, const VectorXd& x, double y,
                                           int n_outer, int n_inner, Rng& rng) {
  const auto samples = detail::gme_draw(state.qw, n_outer, n_inner, rng);
  return gme_grad_terms(state, x, y, samples, true);
}

inline GmeGradTerms gme_suboptimal_grad_terms(const GmeState& state, const VectorXd& x, double y,
                                              int n_outer, int n_inner, Rng& rng) {
  const auto samples = detail::gme_draw(state.qw, n_outer, n_inner, rng);
  return gme_grad_terms(state, x, y, samples, false);
}

struct GmeVlbPair {
  double optimal;
  double suboptimal;
};

/// Both bound estimates from one shared sample set, so the Jensen ordering
/// optimal >= suboptimal holds draw by draw.
inline GmeVlbPair gme_vlb_pair(const GmeState& state, const GmeData& data,
                               const GmeEstimator& est) {
  const double kl = kl_gaussian(state.qw, state.prior_w) + kl_rayleigh(state.qv, state.prior_v);
  double opt = -kl, sub = -kl;
  const double sigma = std::sqrt(state.qv.scale_sq());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    Rng rng(est.stream(i).seed);
    const auto samples = detail::gme_draw(state.qw, est.n_outer, est.n_inner, rng);
    const VectorXd x = data.X.row(i);
    double log_phi_acc = 0.0, mean_ll_acc = 0.0;
    long used = 0;
    for (const auto& s : samples) {
      const double mean_f = x.dot(s.w1);
      const double sd_f = std::sqrt(s.alpha * sigma);
      VectorXd ll(s.eps.size());
      for (std::size_t b = 0; b < s.eps.size(); ++b) {
        ll[b] = state.lik.log_lik(data.y[i], mean_f + sd_f * s.eps[b]);
      }
      const double lse = log_sum_exp(ll);
      if (!std::isfinite(lse)) continue;
      log_phi_acc += lse - std::log(static_cast<double>(ll.size()));
      mean_ll_acc += ll.mean();
      ++used;
    }
    if (used > 0) {
      opt += log_phi_acc / used;
      sub += mean_ll_acc / used;
    }
  }
  return {opt, sub};
}

inline double gme_vlb_optimal(const GmeState& s, const GmeData& d, const GmeEstimator& e) {
  return gme_vlb_pair(s, d, e).optimal;
}
inline double gme_vlb_suboptimal(const GmeState& s, const GmeData& d, const GmeEstimator& e) {
  return gme_vlb_pair(s, d, e).suboptimal;
}

namespace detail {

inline double sigma_positive_step(double sigma, double grad, double rho, GuardLog* log) {
  double step = rho;
  for (int attempt = 0; attempt <= 30; ++attempt) {
    const double cand = sigma + step * grad;
    if (cand > 0.0) return cand;
    step *= 0.5;
  }
  if (log) ++log->rejections;
  return sigma;
}

}  // namespace detail

/// One stochastic update of (q(w1), q(w2)) on the chosen bound.
/// Engine wiring: S-DSVI takes standard steps on (m, C, sigma); MC-SSVI takes
/// natural steps on all three; H-MC-SSVI mixes a standard mean step with
/// natural covariance and sigma steps.
inline GmeState gme_update(const GmeState& state, const GmeData& data, const Minibatch& mb,
                           Engine engine, double rho_nat, const StandardStep& mean_step,
                           const StandardStep& chol_step, const StandardStep& sigma_step,
                           const GmeEstimator& est, bool optimal_bound, GuardLog* log = nullptr) {
  const double scale = mb.empty() ? 0.0 : static_cast<double>(data.size()) / mb.size();
  const Eigen::Index dim = state.qw.dim();
  const double sigma_sq = state.qv.scale_sq();
  const double sigma = std::sqrt(sigma_sq);

  VectorXd sum_m = VectorXd::Zero(dim);
  VectorXd sum_h = VectorXd::Zero(dim);
  MatrixXd sum_H = MatrixXd::Zero(dim, dim);
  double sum_g = 0.0;
  for (std::size_t k = 0; k < mb.size(); ++k) {
    const Eigen::Index i = mb[k];
    const VectorXd x = data.X.row(i);
    Rng rng(est.stream(i).seed);
    const auto samples = detail::gme_draw(state.qw, est.n_outer, est.n_inner, rng);
    const GmeGradTerms t = gme_grad_terms(state, x, data.y[i], samples, optimal_bound);
    if (log) log->skipped += t.skipped;
    sum_m += t.c_m * x;
    sum_h += t.c_h * x;
    sum_H += t.c_H * x * x.transpose();
    sum_g += t.c_g;
  }
  sum_m *= scale;
  sum_h *= scale;
  sum_H *= scale;
  sum_g *= scale;

  GmeState next = state;

  // covariance
  if (engine == Engine::sdsvi) {
    MatrixXd grad_c = MatrixXd::Zero(dim, dim);
    grad_c.diagonal() = state.qw.chol().diagonal().cwiseInverse();
    grad_c += -state.qw.chol() * state.prior_w.precision() + state.qw.chol() * sum_H;
    const MatrixXd scaled =
        chol_step.adagrad ? chol_step.adagrad->step(MatrixXd(triu(grad_c))) : MatrixXd(triu(grad_c));
    const double step = chol_step.adagrad ? 1.0 : chol_step.size();
    const MatrixXd c = cholesky_grad_step(state.qw.chol(), scaled, step);
    next.qw = GaussianDist(state.qw.mean(), c);
  } else {
    const MatrixXd prec = blend_precision_guarded(state.qw.precision(),
                                                  state.prior_w.precision(), -sum_H, rho_nat, log);
    next.qw = GaussianDist::from_moments(state.qw.mean(), spd_inverse(prec));
  }

  // mean
  if (engine == Engine::mcssvi) {
    const VectorXd target = state.prior_w.precision() * state.prior_w.mean() + sum_h;
    const VectorXd theta1 =
        (1.0 - rho_nat) * (state.qw.precision() * state.qw.mean()) + rho_nat * target;
    next.qw = GaussianDist(next.qw.cov() * theta1, next.qw.chol());
  } else {
    const VectorXd grad_m =
        state.prior_w.precision() * (state.prior_w.mean() - state.qw.mean()) + sum_m;
    next.qw = GaussianDist(state.qw.mean() + mean_step.apply(grad_m), next.qw.chol());
  }

  // sigma
  if (engine == Engine::sdsvi) {
    const double grad_sigma =
        2.0 / sigma - 2.0 * sigma / state.prior_v.scale_sq() + 4.0 * sigma * sum_g;
    const double stepped = sigma_step.adagrad
                               ? sigma + sigma_step.adagrad->step(VectorXd(VectorXd::Constant(1, grad_sigma)))[0]
                               : detail::sigma_positive_step(sigma, grad_sigma,
                                                             sigma_step.size(), log);
    next.qv = RayleighDist(stepped > 0.0 ? stepped * stepped : sigma_sq);
    if (!(stepped > 0.0) && log) ++log->rejections;
  } else {
    const double theta_new =
        (1.0 - rho_nat) * state.qv.natural() + rho_nat * (state.prior_v.natural() + sum_g);
    if (theta_new < 0.0) {
      next.qv = RayleighDist::from_natural(theta_new);
    } else if (log) {
      ++log->rejections;  // sign flip: keep the previous scale
    }
  }
  return next;
}

inline GmeState gme_optimal_updates(const GmeState& state, const GmeData& data,
                                    const Minibatch& mb, Engine engine, double rho_nat,
                                    const StandardStep& mean_step, const StandardStep& chol_step,
                                    const StandardStep& sigma_step, const GmeEstimator& est,
                                    GuardLog* log = nullptr) {
  return gme_update(state, data, mb, engine, rho_nat, mean_step, chol_step, sigma_step, est, true,
                    log);
}

inline GmeState gme_suboptimal_updates(const GmeState& state, const GmeData& data,
                                       const Minibatch& mb, Engine engine, double rho_nat,
                                       const StandardStep& mean_step, const StandardStep& chol_step,
                                       const StandardStep& sigma_step, const GmeEstimator& est,
                                       GuardLog* log = nullptr) {
  return gme_update(state, data, mb, engine, rho_nat, mean_step, chol_step, sigma_step, est, false,
                    log);
}

// ---------------------------------------------------------------------------
// mean field approximation

inline double gme_mf_z(const GmeState& state, const GmeData& data, Eigen::Index i) {
  const VectorXd x = data.X.row(i);
  const double b = state.mf_beta[i];
  const double g = state.mf_gamma[i];
  const double mx = x.dot(state.qw.mean());
  return b * b + g * g - 2.0 * b * mx + x.dot((state.qw.mean() * state.qw.mean().transpose() +
                                               state.qw.cov()) * x);
}

/// Mean-field VLB. E[1/w2] enters through the sqrt(2 pi)/sigma constant that
/// the update equations are built on, so the closed forms below are exact
/// stationary points of this objective.
inline double gme_meanfield_vlb(const GmeState& state, const GmeData& data,
                                const GaussianExpectationEstimator& est) {
  if (state.mf_beta.size() != data.size()) {
    throw Error("gme_meanfield_vlb: local parameters not initialized");
  }
  const double sigma = std::sqrt(state.qv.scale_sq());
  const double kl = kl_gaussian(state.qw, state.prior_w) + kl_rayleigh(state.qv, state.prior_v);
  // E[log w2] for Rayleigh(sigma^2) = (log(2 sigma^2) - euler_gamma)/2
  const double euler_gamma = 0.5772156649015328606;
  const double e_log_w2 = 0.5 * (std::log(2.0 * state.qv.scale_sq()) - euler_gamma);
  double value = -kl;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double g = state.mf_gamma[i];
    value += est.stream(i).expect(state.mf_beta[i], g * g,
                                  [&](double f) { return state.lik.log_lik(data.y[i], f); });
    value += -0.5 * (e_log_w2 + std::log(2.0 * M_PI) +
                     std::sqrt(2.0 * M_PI) / sigma * gme_mf_z(state, data, i));
    value += 0.5 * std::log(2.0 * M_PI * M_E * g * g);
  }
  return value;
}

/// Largest positive root of -(2/tau^2) s^3 + (2 - N/2) s + const = 0.
inline double gme_mf_sigma_root(double tau_sq, double n, double constant) {
  auto p = [&](double s) {
    return -(2.0 / tau_sq) * s * s * s + (2.0 - 0.5 * n) * s + constant;
  };
  double hi = std::max(std::sqrt(tau_sq), 1.0);
  int grow = 0;
  while (p(hi) > 0.0 && grow++ < 200) hi *= 2.0;
  if (p(hi) > 0.0) throw Error("gme_mf_sigma_root: no sign change found");
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (p(mid) >= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double root = 0.5 * (lo + hi);
  if (!(root > 1e-12)) throw Error("gme_mf_sigma_root: no positive real root");
  return root;
}

inline void gme_meanfield_init_locals(GmeState& state, const GmeData& data) {
  const Eigen::Index n = data.size();
  if (state.mf_beta.size() != n) {
    state.mf_beta = data.X * state.qw.mean();
    state.mf_gamma = VectorXd::Ones(n);
    state.mf_acc_beta = VectorXd::Zero(n);
    state.mf_acc_gamma = VectorXd::Zero(n);
  }
}

/// ADAGRAD refinement of the locals (beta_i, gamma_i) with the global
/// parameters held fixed. Accumulators persist in the state so the step
/// size keeps shrinking near the optimum.
inline GmeState gme_meanfield_locals(const GmeState& state, const GmeData& data,
                                     const GaussianExpectationEstimator& est, int iters) {
  GmeState next = state;
  gme_meanfield_init_locals(next, data);
  const double c = std::sqrt(2.0 * M_PI) / std::sqrt(state.qv.scale_sq());
  const double eps_ad = 1e-8;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const VectorXd x = data.X.row(i);
    const double mx = x.dot(next.qw.mean());
    double beta = next.mf_beta[i];
    double gamma = next.mf_gamma[i];
    double acc_b = next.mf_acc_beta[i];
    double acc_g = next.mf_acc_gamma[i];
    for (int it = 0; it < iters; ++it) {
      const auto e = est.stream(i * 1000 + it);
      const double d1 = e.expect(beta, gamma * gamma,
                                 [&](double f) { return state.lik.d1(data.y[i], f); });
      const double d2 = e.expect(beta, gamma * gamma,
                                 [&](double f) { return state.lik.d2(data.y[i], f); });
      const double gb = c * (mx - beta) + d1;
      const double gg = -c * gamma + gamma * d2 + 1.0 / gamma;
      beta += gb / (eps_ad + std::sqrt(acc_b + gb * gb));
      // gamma stays positive by stepping its logarithm (chain rule on gg)
      const double gl = gamma * gg;
      gamma *= std::exp(gl / (eps_ad + std::sqrt(acc_g + gl * gl)));
      acc_b += gb * gb;
      acc_g += gl * gl;
    }
    next.mf_beta[i] = beta;
    next.mf_gamma[i] = gamma;
    next.mf_acc_beta[i] = acc_b;
    next.mf_acc_gamma[i] = acc_g;
  }
  return next;
}

/// One full-batch mean-field pass: closed-form (m, S), ADAGRAD refinement of
/// the locals (beta_i, gamma_i), then the cubic-root sigma update.
inline GmeState gme_meanfield_updates(const GmeState& state, const GmeData& data,
                                      const GaussianExpectationEstimator& est,
                                      int local_iters = 50) {
  GmeState next = state;
  gme_meanfield_init_locals(next, data);
  const double c = std::sqrt(2.0 * M_PI) / std::sqrt(state.qv.scale_sq());

  // closed-form m, S
  const MatrixXd prec =
      state.prior_w.precision() + c * data.X.transpose() * data.X;
  const MatrixXd cov = spd_inverse(prec);
  const VectorXd m = cov * (state.prior_w.precision() * state.prior_w.mean() +
                            c * data.X.transpose() * next.mf_beta);
  next.qw = GaussianDist::from_moments(m, cov);

  next = gme_meanfield_locals(next, data, est, local_iters);

  // sigma from the cubic stationarity condition
  double sum_z = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) sum_z += gme_mf_z(next, data, i);
  const double root = gme_mf_sigma_root(state.prior_v.scale_sq(),
                                        static_cast<double>(data.size()),
                                        0.5 * std::sqrt(2.0 * M_PI) * sum_z);
  next.qv = RayleighDist(root * root);
  return next;
}

// ---------------------------------------------------------------------------
// prediction

/// Predictive distribution for a new input: the Rayleigh noise variance is
/// integrated by a quadrature rule folded from Gauss-Hermite
/// (E_Rayl[g] = E_{s~N(0,1)}[|s| g(sqrt(2) sigma |s|)]), the latent f by an
/// inner Gauss-Hermite rule or analytically for the Gaussian likelihood.
class GmePredictive {
 public:
  GmePredictive(const GmeState& state, const VectorXd& x_star, int quad_points = 200,
                int inner_points = 100)
      : lik_(state.lik), inner_points_(inner_points) {
    mean_ = x_star.dot(state.qw.mean());
    var0_ = x_star.dot(state.qw.cov() * x_star);
    const auto& gh = GaussHermite::cached(quad_points);
    const double sigma = std::sqrt(state.qv.scale_sq());
    nodes_.resize(quad_points);
    weights_.resize(quad_points);
    double wsum = 0.0;
    for (int i = 0; i < quad_points; ++i) {
      nodes_[i] = std::sqrt(2.0) * sigma * std::abs(gh.nodes[i]);
      weights_[i] = gh.weights[i] * std::abs(gh.nodes[i]);
      wsum += weights_[i];
    }
    for (double& w : weights_) w /= wsum;
  }

  double log_prob(double y) const {
    VectorXd terms(nodes_.size());
    for (Eigen::Index i = 0; i < nodes_.size(); ++i) {
      const double var = var0_ + nodes_[i];
      double g;
      if (lik_.kind() == LikelihoodModel::Kind::gaussian) {
        const double total = var + lik_.noise_var();
        g = -0.5 * std::log(2.0 * M_PI * total) - 0.5 * (y - mean_) * (y - mean_) / total;
      } else if (var < 1e-12) {
        g = lik_.log_lik(y, mean_);
      } else {
        VectorXd inner(inner_points_);
        const auto& gh = GaussHermite::cached(inner_points_);
        const double scale = std::sqrt(2.0 * var);
        for (int q = 0; q < inner_points_; ++q) {
          inner[q] = std::log(gh.weights[q] / std::sqrt(M_PI)) +
                     lik_.log_lik(y, mean_ + scale * gh.nodes[q]);
        }
        g = log_sum_exp(inner);
      }
      terms[i] = std::log(weights_[i]) + g;
    }
    return log_sum_exp(terms);
  }

  /// Point estimate: predictive mean (gaussian/count, counts rounded),
  /// thresholded probability (binary), argmax level (ordinal).
  double point_estimate() const {
    switch (lik_.kind()) {
      case LikelihoodModel::Kind::gaussian:
        return mean_;
      case LikelihoodModel::Kind::logistic:
        return std::exp(log_prob(1.0)) >= 0.5 ? 1.0 : -1.0;
      case LikelihoodModel::Kind::poisson_logistic: {
        double ey = 0.0;
        for (Eigen::Index i = 0; i < nodes_.size(); ++i) {
          const double var = std::max(var0_ + nodes_[i], 1e-12);
          ey += weights_[i] * GaussHermite::cached(20).expect(mean_, var, [&](double f) {
            return lik_.lambda_max() * sigmoid(f);
          });
        }
        return std::round(std::max(ey, 0.0));
      }
      case LikelihoodModel::Kind::ordinal: {
        int best = 1;
        double best_lp = -std::numeric_limits<double>::infinity();
        for (int level = 1; level <= lik_.levels(); ++level) {
          const double lp = log_prob(level);
          if (lp > best_lp) {
            best_lp = lp;
            best = level;
          }
        }
        return best;
      }
    }
    throw Error("unreachable");
  }

  double latent_mean() const { return mean_; }
  double latent_var() const { return var0_; }

 private:
  LikelihoodModel lik_;
  int inner_points_;
  double mean_;
  double var0_;
  VectorXd nodes_;
  VectorXd weights_;
};

inline GmePredictive gme_predict(const GmeState& state, const VectorXd& x_star,
                                 int quad_points = 200) {
  return GmePredictive(state, x_star, quad_points);
}

}  // namespace ssvi
