#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ssvi/dataio.hpp"
#include "ssvi/expfam.hpp"
#include "ssvi/likelihoods.hpp"
#include "ssvi/optim.hpp"
#include "ssvi/quadrature.hpp"

namespace ssvi {

enum class PmfSide { u, v };

/// Matrix factorization state: independent Gaussians per column of U and V
/// under zero-mean spherical priors, plus per-column observation lists.
struct PmfState {
  Eigen::Index latent_dim = 0;
  std::vector<GaussianDist> u;
  std::vector<GaussianDist> v;
  double sigma_u_sq = 1.0;
  double sigma_v_sq = 1.0;
  LikelihoodModel lik;
  // obs_by_u[i] holds (j, y); obs_by_v[j] holds (i, y)
  std::vector<std::vector<std::pair<Eigen::Index, double>>> obs_by_u;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> obs_by_v;

  Eigen::Index num_u() const { return static_cast<Eigen::Index>(u.size()); }
  Eigen::Index num_v() const { return static_cast<Eigen::Index>(v.size()); }

  const GaussianDist& column(PmfSide side, Eigen::Index idx) const {
    return side == PmfSide::u ? u[idx] : v[idx];
  }

  static PmfState init(const TripletData& data, Eigen::Index latent_dim,
                       const LikelihoodModel& lik, double sigma_u_sq = 1.0,
                       double sigma_v_sq = 1.0, double init_var = 10.0,
                       std::uint64_t seed = 0) {
    PmfState st;
    st.latent_dim = latent_dim;
    st.sigma_u_sq = sigma_u_sq;
    st.sigma_v_sq = sigma_v_sq;
    st.lik = lik;
    Rng rng(seed);
    const MatrixXd c = std::sqrt(init_var) * MatrixXd::Identity(latent_dim, latent_dim);
    // small random means break the u/v sign symmetry of the factorization
    for (Eigen::Index i = 0; i < data.rows; ++i) {
      st.u.emplace_back(0.1 * rng.normal_vector(latent_dim), c);
    }
    for (Eigen::Index j = 0; j < data.cols; ++j) {
      st.v.emplace_back(0.1 * rng.normal_vector(latent_dim), c);
    }
    st.obs_by_u.resize(data.rows);
    st.obs_by_v.resize(data.cols);
    for (std::size_t k = 0; k < data.size(); ++k) {
      st.obs_by_u[data.i[k]].emplace_back(data.j[k], data.y[k]);
      st.obs_by_v[data.j[k]].emplace_back(data.i[k], data.y[k]);
    }
    return st;
  }
};

/// Sampling configuration for the nested estimator: k1 draws of the profiled
/// column, k2 latent draws per column draw. exact_gaussian switches to the
/// closed-form terms available under the Gaussian likelihood.
struct PmfEstimator {
  int k1 = 10;
  int k2 = 10;
  std::uint64_t seed = 0;
  bool exact_gaussian = false;

  PmfEstimator stream(std::uint64_t index) const {
    PmfEstimator e = *this;
    e.seed = detail::splitmix64(seed ^ (index * 0x9e3779b97f4a7c15ULL + 5));
    return e;
  }
};

struct PmfDhat {
  MatrixXd D;
  VectorXd d;
};

namespace detail {

/// Shared-sample estimate of D and d for one observation. `profile` is the
/// column being integrated over (u_i when updating v_j) and `target` the
/// column being updated.
inline PmfDhat pmf_dhat_impl(const GaussianDist& profile, const GaussianDist& target,
                             const LikelihoodModel& lik, double y, const PmfEstimator& est) {
  const Eigen::Index k = profile.dim();
  PmfDhat out{MatrixXd::Zero(k, k), VectorXd::Zero(k)};
  if (est.exact_gaussian) {
    if (lik.kind() != LikelihoodModel::Kind::gaussian) {
      throw Error("pmf_dhat: exact mode requires the gaussian likelihood");
    }
    const double s2 = lik.noise_var();
    const MatrixXd second_moment =
        profile.cov() + profile.mean() * profile.mean().transpose();
    out.D = -0.5 / s2 * second_moment;
    out.d = (y * profile.mean() - second_moment * target.mean()) / s2;
    return out;
  }
  Rng rng(est.seed);
  for (int a = 0; a < est.k1; ++a) {
    const VectorXd ua = profile.sample(rng);
    const double mean_f = ua.dot(target.mean());
    const double var_f = std::max(ua.dot(target.cov() * ua), 1e-12);
    const double sd_f = std::sqrt(var_f);
    double sum_d1 = 0.0, sum_d2 = 0.0;
    for (int b = 0; b < est.k2; ++b) {
      const LogLikDerivs dv = lik.eval(y, mean_f + sd_f * rng.normal());
      sum_d1 += dv.d1;
      sum_d2 += dv.d2;
    }
    out.D.noalias() += 0.5 * sum_d2 * ua * ua.transpose();
    out.d += sum_d1 * ua;
  }
  out.D /= static_cast<double>(est.k1) * est.k2;
  out.d /= static_cast<double>(est.k1) * est.k2;
  return out;
}

}  // namespace detail

/// D and d for observation (i, j) in the v-update direction: u_i is sampled
/// k1 times, then f | u ~ N(m_v.u, u^T S_v u) k2 times. The observed value is
/// looked up in the state; (i, j) must be observed.
inline PmfDhat pmf_dhat(const PmfState& st, Eigen::Index i, Eigen::Index j,
                        const PmfEstimator& est) {
  for (const auto& [row, y] : st.obs_by_v[j]) {
    if (row == i) return detail::pmf_dhat_impl(st.u[i], st.v[j], st.lik, y, est);
  }
  throw Error("pmf_dhat: cell (i, j) is not observed");
}

inline PmfDhat pmf_dhat(const PmfState& st, Eigen::Index i, Eigen::Index j, double y,
                        const PmfEstimator& est) {
  return detail::pmf_dhat_impl(st.u[i], st.v[j], st.lik, y, est);
}

/// Monte Carlo VLB: data terms by the two-stage sampling scheme, KL terms in
/// closed form against the spherical priors.
inline double pmf_vlb(const PmfState& st, const PmfEstimator& est) {
  double value = 0.0;
  const GaussianDist prior_u =
      GaussianDist::spherical(st.latent_dim, VectorXd::Zero(st.latent_dim), st.sigma_u_sq);
  const GaussianDist prior_v =
      GaussianDist::spherical(st.latent_dim, VectorXd::Zero(st.latent_dim), st.sigma_v_sq);
  for (const auto& q : st.u) value -= kl_gaussian(q, prior_u);
  for (const auto& q : st.v) value -= kl_gaussian(q, prior_v);
  std::uint64_t cell = 0;
  for (Eigen::Index j = 0; j < st.num_v(); ++j) {
    for (const auto& [i, y] : st.obs_by_v[j]) {
      Rng rng(est.stream(cell++).seed);
      double acc = 0.0;
      for (int a = 0; a < est.k1; ++a) {
        const VectorXd ua = st.u[i].sample(rng);
        const double mean_f = ua.dot(st.v[j].mean());
        const double sd_f = std::sqrt(std::max(ua.dot(st.v[j].cov() * ua), 1e-12));
        for (int b = 0; b < est.k2; ++b) {
          acc += st.lik.log_lik(y, mean_f + sd_f * rng.normal());
        }
      }
      value += acc / (static_cast<double>(est.k1) * est.k2);
    }
  }
  return value;
}

/// One column update. Natural-gradient covariance per the guarded precision
/// blend; the mean moves by the engine's rule. Columns without observations
/// blend toward the prior.
inline void pmf_column_update(PmfState& st, PmfSide side, Eigen::Index idx, Engine engine,
                              double rho_nat, const StandardStep& mean_step,
                              const StandardStep& chol_step, const PmfEstimator& est,
                              Eigen::Index batch_size, std::uint64_t batch_seed,
                              GuardLog* log = nullptr) {
  const auto& obs = (side == PmfSide::u) ? st.obs_by_u[idx] : st.obs_by_v[idx];
  const double prior_var = (side == PmfSide::u) ? st.sigma_u_sq : st.sigma_v_sq;
  GaussianDist& target = (side == PmfSide::u) ? st.u[idx] : st.v[idx];
  const Eigen::Index k = st.latent_dim;
  const MatrixXd prior_prec = MatrixXd::Identity(k, k) / prior_var;

  // minibatch without replacement
  std::vector<Eigen::Index> pick(obs.size());
  for (std::size_t t = 0; t < obs.size(); ++t) pick[t] = static_cast<Eigen::Index>(t);
  if (batch_size > 0 && static_cast<Eigen::Index>(obs.size()) > batch_size) {
    Rng rng(batch_seed);
    rng.shuffle(pick);
    pick.resize(batch_size);
  }
  const double scale = pick.empty() ? 0.0 : static_cast<double>(obs.size()) / pick.size();

  MatrixXd sum_D = MatrixXd::Zero(k, k);
  VectorXd sum_d = VectorXd::Zero(k);
  VectorXd sum_dm = VectorXd::Zero(k);  // sum of (d - 2 D m) for the natural mean
  for (std::size_t t = 0; t < pick.size(); ++t) {
    const auto& [other, y] = obs[pick[t]];
    const GaussianDist& profile = (side == PmfSide::u) ? st.v[other] : st.u[other];
    const PmfDhat hat =
        detail::pmf_dhat_impl(profile, target, st.lik, y, est.stream(1000003 * idx + t));
    sum_D += hat.D;
    sum_d += hat.d;
    sum_dm += hat.d - 2.0 * hat.D * target.mean();
  }
  sum_D *= scale;
  sum_d *= scale;
  sum_dm *= scale;

  // covariance
  MatrixXd new_chol = target.chol();
  MatrixXd new_cov = target.cov();
  if (engine == Engine::sdsvi) {
    MatrixXd grad_c = MatrixXd::Zero(k, k);
    grad_c.diagonal() = target.chol().diagonal().cwiseInverse();
    grad_c += -target.chol() * prior_prec + 2.0 * target.chol() * sum_D;
    const MatrixXd scaled =
        chol_step.adagrad ? chol_step.adagrad->step(MatrixXd(triu(grad_c))) : MatrixXd(triu(grad_c));
    new_chol = cholesky_grad_step(target.chol(), scaled,
                                  chol_step.adagrad ? 1.0 : chol_step.size());
    new_cov = symmetrize(new_chol.transpose() * new_chol);
  } else {
    const MatrixXd prec =
        blend_precision_guarded(target.precision(), prior_prec, -2.0 * sum_D, rho_nat, log);
    new_cov = spd_inverse(prec);
  }

  // mean
  VectorXd new_mean;
  if (engine == Engine::mcssvi) {
    const VectorXd theta1 =
        (1.0 - rho_nat) * (target.precision() * target.mean()) + rho_nat * sum_dm;
    new_mean = new_cov * theta1;
  } else {
    const VectorXd grad = -prior_prec * target.mean() + sum_d;
    new_mean = target.mean() + mean_step.apply(grad);
  }

  target = (engine == Engine::sdsvi) ? GaussianDist(new_mean, new_chol)
                                     : GaussianDist::from_moments(new_mean, new_cov);
}

/// sigma_V^2 <- mean over columns of (tr(S) + m.m)/K; likewise sigma_U^2.
inline void pmf_hyper_update(PmfState& st) {
  auto update = [&](const std::vector<GaussianDist>& cols) {
    double acc = 0.0;
    for (const auto& q : cols) acc += q.cov().trace() + q.mean().squaredNorm();
    return acc / (static_cast<double>(cols.size()) * st.latent_dim);
  };
  st.sigma_u_sq = update(st.u);
  st.sigma_v_sq = update(st.v);
}

/// Round-robin training pass: alternate u- and v-columns, each side wrapping
/// independently, hyperparameters refreshed after every column.
struct PmfTrainer {
  PmfState state;
  Engine engine = Engine::hmcssvi;
  PmfEstimator est;
  Eigen::Index batch_size = 0;  // 0 = use every observation of the column
  bool hyper_updates = true;
  GuardLog log;
  long epoch = 0;
  // per-column natural schedules: the first touch of a column is a pure
  // fixed-point step
  std::vector<StepSchedule> sched_u, sched_v;
  std::vector<AdagradState> ad_mean_u, ad_mean_v;
  std::vector<AdagradState> ad_chol_u, ad_chol_v;

  PmfTrainer(PmfState s, Engine e, PmfEstimator es, Eigen::Index batch = 0,
             StepSchedule proto = StepSchedule::one_over_t())
      : state(std::move(s)), engine(e), est(es), batch_size(batch) {
    const Eigen::Index k = state.latent_dim;
    for (Eigen::Index i = 0; i < state.num_u(); ++i) {
      sched_u.push_back(proto);
      ad_mean_u.emplace_back(k);
      ad_chol_u.emplace_back(k * k);
    }
    for (Eigen::Index j = 0; j < state.num_v(); ++j) {
      sched_v.push_back(proto);
      ad_mean_v.emplace_back(k);
      ad_chol_v.emplace_back(k * k);
    }
  }
};

inline void pmf_round_robin_epoch(PmfTrainer& tr) {
  const Eigen::Index steps = std::max(tr.state.num_u(), tr.state.num_v());
  std::uint64_t tick = static_cast<std::uint64_t>(tr.epoch) * 2 * steps;
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (PmfSide side : {PmfSide::u, PmfSide::v}) {
      const Eigen::Index idx =
          (side == PmfSide::u) ? t % tr.state.num_u() : t % tr.state.num_v();
      const double rho =
          (side == PmfSide::u) ? tr.sched_u[idx].next() : tr.sched_v[idx].next();
      AdagradState& ad_mean =
          (side == PmfSide::u) ? tr.ad_mean_u[idx] : tr.ad_mean_v[idx];
      AdagradState& ad_chol =
          (side == PmfSide::u) ? tr.ad_chol_u[idx] : tr.ad_chol_v[idx];
      const StandardStep mean_step =
          (tr.engine == Engine::mcssvi) ? StandardStep::fixed(rho) : StandardStep::driven(ad_mean);
      const StandardStep chol_step =
          (tr.engine == Engine::sdsvi) ? StandardStep::driven(ad_chol) : StandardStep::fixed(rho);
      pmf_column_update(tr.state, side, idx, tr.engine, rho, mean_step, chol_step,
                        tr.est.stream(tick), tr.batch_size, tr.est.stream(tick).seed ^ 0x5bd1,
                        &tr.log);
      ++tick;
      if (tr.hyper_updates) pmf_hyper_update(tr.state);
    }
  }
  ++tr.epoch;
}

// ---------------------------------------------------------------------------
// prediction and evaluation

struct PmfMoments {
  double mean;
  double var;
};

/// Gaussian moment-matching of the product u.v:
/// var = tr(S_u S_v) + m_u^T S_v m_u + m_v^T S_u m_v.
inline PmfMoments pmf_latent_moments(const PmfState& st, Eigen::Index i, Eigen::Index j) {
  const auto& qu = st.u[i];
  const auto& qv = st.v[j];
  const double mean = qu.mean().dot(qv.mean());
  const double var = (qu.cov() * qv.cov()).trace() + qu.mean().dot(qv.cov() * qu.mean()) +
                     qv.mean().dot(qu.cov() * qv.mean());
  return {mean, var};
}

/// Predictive log-likelihood log E_{N(f|m_ij,S_ij)}[p(y|f)], Monte Carlo with
/// n_samples draws (gaussian likelihood in closed form).
inline double pmf_predict_loglik(const PmfState& st, Eigen::Index i, Eigen::Index j, double y,
                                 int n_samples = 1000, std::uint64_t seed = 0) {
  const auto mom = pmf_latent_moments(st, i, j);
  if (st.lik.kind() == LikelihoodModel::Kind::gaussian) {
    const double total = mom.var + st.lik.noise_var();
    return -0.5 * std::log(2.0 * M_PI * total) - 0.5 * (y - mom.mean) * (y - mom.mean) / total;
  }
  Rng rng(detail::splitmix64(seed ^ (0x9e37u + 31 * i + 7 * j)));
  const double sd = std::sqrt(std::max(mom.var, 0.0));
  VectorXd ll(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    ll[s] = st.lik.log_lik(y, mom.mean + sd * rng.normal());
  }
  return log_sum_exp(ll) - std::log(static_cast<double>(n_samples));
}

/// Point estimate under the moment-matched latent: binary thresholds the
/// latent mean at 1/2, counts round the 20-point quadrature of E[y], ordinal
/// takes the argmax level of the 100-point quadrature pmf.
inline double pmf_point_estimate(const PmfState& st, Eigen::Index i, Eigen::Index j) {
  const auto mom = pmf_latent_moments(st, i, j);
  switch (st.lik.kind()) {
    case LikelihoodModel::Kind::gaussian:
      return mom.mean;
    case LikelihoodModel::Kind::logistic:
      return mom.mean > 0.5 ? 1.0 : -1.0;
    case LikelihoodModel::Kind::poisson_logistic: {
      const double ey = GaussHermite::cached(20).expect(mom.mean, std::max(mom.var, 1e-12),
                                                        [&](double f) {
                                                          return st.lik.lambda_max() * sigmoid(f);
                                                        });
      return std::round(std::max(ey, 0.0));
    }
    case LikelihoodModel::Kind::ordinal: {
      int best = 1;
      double best_p = -1.0;
      for (int level = 1; level <= st.lik.levels(); ++level) {
        const double p = GaussHermite::cached(100).expect(
            mom.mean, std::max(mom.var, 1e-12),
            [&](double f) { return std::exp(st.lik.log_lik(level, f)); });
        if (p > best_p) {
          best_p = p;
          best = level;
        }
      }
      return best;
    }
  }
  throw Error("unreachable");
}

/// Binary estimate thresholding the predictive probability instead of the
/// latent mean.
inline double pmf_point_estimate_prob(const PmfState& st, Eigen::Index i, Eigen::Index j) {
  if (st.lik.kind() != LikelihoodModel::Kind::logistic) {
    throw Error("pmf_point_estimate_prob: binary likelihood only");
  }
  const auto mom = pmf_latent_moments(st, i, j);
  const double p = GaussHermite::cached(100).expect(mom.mean, std::max(mom.var, 1e-12),
                                                    [&](double f) { return sigmoid(f); });
  return p >= 0.5 ? 1.0 : -1.0;
}

struct PmfMetrics {
  double nll = 0.0;
  double error = 0.0;          // zero-one / relative-excluding-zeros / absolute / rmse
  double nonzero_error = 0.0;  // counts only: true zeros predicted nonzero
};

inline PmfMetrics pmf_evaluate(const PmfState& st, const TripletData& test, int n_samples = 1000,
                               std::uint64_t seed = 0) {
  PmfMetrics m;
  long err_count = 0;
  long zero_count = 0;
  for (std::size_t t = 0; t < test.size(); ++t) {
    const Eigen::Index i = test.i[t];
    const Eigen::Index j = test.j[t];
    const double y = test.y[t];
    m.nll -= pmf_predict_loglik(st, i, j, y, n_samples, seed + t);
    switch (st.lik.kind()) {
      case LikelihoodModel::Kind::gaussian: {
        const double e = pmf_point_estimate(st, i, j) - y;
        m.error += e * e;
        ++err_count;
        break;
      }
      case LikelihoodModel::Kind::logistic: {
        m.error += (pmf_point_estimate_prob(st, i, j) != y) ? 1.0 : 0.0;
        ++err_count;
        break;
      }
      case LikelihoodModel::Kind::poisson_logistic: {
        const double est = pmf_point_estimate(st, i, j);
        if (y != 0.0) {
          m.error += std::abs(est - y) / y;  // relative error excluding true zeros
          ++err_count;
        } else {
          ++zero_count;
          if (est != 0.0) m.nonzero_error += 1.0;
        }
        break;
      }
      case LikelihoodModel::Kind::ordinal: {
        m.error += std::abs(pmf_point_estimate(st, i, j) - y);
        ++err_count;
        break;
      }
    }
  }
  m.nll /= static_cast<double>(test.size());
  if (err_count > 0) m.error /= static_cast<double>(err_count);
  if (st.lik.kind() == LikelihoodModel::Kind::gaussian) m.error = std::sqrt(m.error);
  if (zero_count > 0) m.nonzero_error /= static_cast<double>(zero_count);
  return m;
}

}  // namespace ssvi
