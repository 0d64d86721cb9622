#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "ssvi/dataio.hpp"
#include "ssvi/gme.hpp"
#include "test_support.hpp"

using namespace ssvi;

namespace {

// ---------------------------------------------------------------------------
// Deterministic quadrature evaluation of the GME objective and its gradient
// expressions. Outer w1 by tensor Gauss-Hermite, w2 by the folded rule
// E_Rayl[g] = E_{s~N(0,1)}[|s| g(sqrt(2) sigma |s|)], inner f by Gauss-Hermite.
// Serves as the oracle for finite-difference validation.

struct QuadRule {
  std::vector<VectorXd> w1_nodes;
  std::vector<double> w1_weights;
  std::vector<double> w2_nodes;
  std::vector<double> w2_weights;
};

QuadRule build_rule(const GaussianDist& qw, double sigma_sq, int n1, int n2) {
  QuadRule r;
  const auto& gh = GaussHermite::cached(n1);
  const int dim = static_cast<int>(qw.dim());
  std::vector<int> idx(dim, 0);
  while (true) {
    VectorXd z(dim);
    double w = 1.0;
    for (int d = 0; d < dim; ++d) {
      z[d] = std::sqrt(2.0) * gh.nodes[idx[d]];
      w *= gh.weights[idx[d]] / std::sqrt(M_PI);
    }
    r.w1_nodes.push_back(qw.mean() + qw.chol().transpose() * z);
    r.w1_weights.push_back(w);
    int d = 0;
    for (; d < dim; ++d) {
      if (++idx[d] < n1) break;
      idx[d] = 0;
    }
    if (d == dim) break;
  }
  const auto& gh2 = GaussHermite::cached(n2);
  double wsum = 0.0;
  for (int i = 0; i < n2; ++i) {
    r.w2_nodes.push_back(std::sqrt(2.0 * sigma_sq) * std::abs(gh2.nodes[i]));
    r.w2_weights.push_back(gh2.weights[i] * std::abs(gh2.nodes[i]));
    wsum += r.w2_weights.back();
  }
  for (double& w : r.w2_weights) w /= wsum;
  return r;
}

struct QuadGrads {
  double value = 0.0;  // sum_i E[ (log) phi_i ]
  VectorXd grad_m;
  MatrixXd hess_sum;  // sum_i E[hess_i] x x^T accumulation
  double grad_g = 0.0;
};

QuadGrads quad_terms(const GmeState& state, const GmeData& data, bool optimal, int n1 = 16,
                     int n2 = 48, int nf = 96) {
  const double sigma_sq = state.qv.scale_sq();
  QuadRule r = build_rule(state.qw, sigma_sq, n1, n2);
  QuadGrads out;
  out.grad_m = VectorXd::Zero(state.qw.dim());
  out.hess_sum = MatrixXd::Zero(state.qw.dim(), state.qw.dim());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const VectorXd x = data.X.row(i);
    for (std::size_t a = 0; a < r.w1_nodes.size(); ++a) {
      for (std::size_t b = 0; b < r.w2_nodes.size(); ++b) {
        const double w = r.w1_weights[a] * r.w2_weights[b];
        const double w2 = r.w2_nodes[b];
        const GmeTriple tr =
            gme_expectation_triple_quad(state.lik, data.y[i], x.dot(r.w1_nodes[a]), w2, nf);
        double value, g1, hess, dw2;
        if (optimal) {
          value = tr.log_e;
          g1 = tr.r1;
          hess = tr.r2 - tr.r1 * tr.r1;
          dw2 = 0.5 * tr.r2;
        } else {
          // suboptimal: phi = E[log p]; evaluate with the same quadrature
          const auto& gh = GaussHermite::cached(nf);
          const double scale = std::sqrt(2.0 * w2);
          double e0 = 0.0, e1 = 0.0, e2 = 0.0;
          for (int q = 0; q < nf; ++q) {
            const LogLikDerivs d =
                state.lik.eval(data.y[i], x.dot(r.w1_nodes[a]) + scale * gh.nodes[q]);
            e0 += gh.weights[q] * d.value;
            e1 += gh.weights[q] * d.d1;
            e2 += gh.weights[q] * d.d2;
          }
          value = e0 / std::sqrt(M_PI);
          g1 = e1 / std::sqrt(M_PI);
          hess = e2 / std::sqrt(M_PI);
          dw2 = 0.5 * hess;
        }
        out.value += w * value;
        out.grad_m += w * g1 * x;
        out.hess_sum += w * hess * x * x.transpose();
        out.grad_g += w * (w2 / (4.0 * sigma_sq)) * dw2;
      }
    }
  }
  return out;
}

double quad_vlb(const GmeState& state, const GmeData& data, bool optimal) {
  return -kl_gaussian(state.qw, state.prior_w) - kl_rayleigh(state.qv, state.prior_v) +
         quad_terms(state, data, optimal).value;
}

GmeState with_mean(const GmeState& s, const VectorXd& m) {
  GmeState out = s;
  out.qw = GaussianDist(m, s.qw.chol());
  return out;
}

GmeState with_chol(const GmeState& s, const MatrixXd& c) {
  GmeState out = s;
  out.qw = GaussianDist(s.qw.mean(), c);
  return out;
}

GmeState with_sigma_sq(const GmeState& s, double sq) {
  GmeState out = s;
  out.qv = RayleighDist(sq);
  return out;
}

GmeState small_instance(const LikelihoodModel& lik, GmeData& data, Rng& rng, int n = 5,
                        int dim = 2) {
  data = synth_gme(n, dim, lik, 4.0, rng.integer(1u << 30));
  GmeState state = GmeState::init(dim, lik, 4.0, 1.0, 1.5);
  // move off the symmetric initial point
  state.qw = GaussianDist::from_moments(0.3 * rng.normal_vector(dim),
                                        MatrixXd::Identity(dim, dim) * 0.8);
  return state;
}

}  // namespace

TEST_CASE("gme gradient expressions match finite differences of the quadrature objective") {
  Rng rng(1001);
  GmeData data;
  GmeState state = small_instance(LikelihoodModel::poisson_logistic(10.0), data, rng);

  for (bool optimal : {true, false}) {
    const QuadGrads g = quad_terms(state, data, optimal);
    const double eps = 1e-5;

    // mean direction: dVLB/dm = Sigma^-1 (mu - m) + sum E[grad]
    const VectorXd full_grad_m =
        state.prior_w.precision() * (state.prior_w.mean() - state.qw.mean()) + g.grad_m;
    for (int k = 0; k < 2; ++k) {
      VectorXd up = state.qw.mean(), dn = state.qw.mean();
      up[k] += eps;
      dn[k] -= eps;
      const double fd =
          (quad_vlb(with_mean(state, up), data, optimal) -
           quad_vlb(with_mean(state, dn), data, optimal)) / (2 * eps);
      CHECK(fd == Approx(full_grad_m[k]).epsilon(1e-3).margin(1e-6));
    }

    // Cholesky direction: dVLB/dC = (C o I)^-1 - C Sigma^-1 + C sum E[hess]
    const MatrixXd& c = state.qw.chol();
    MatrixXd grad_c = MatrixXd::Zero(2, 2);
    grad_c.diagonal() = c.diagonal().cwiseInverse();
    grad_c += -c * state.prior_w.precision() + c * g.hess_sum;
    grad_c = triu(grad_c);
    for (auto [r0, c0] : std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 1}}) {
      MatrixXd up = c, dn = c;
      up(r0, c0) += eps;
      dn(r0, c0) -= eps;
      const double fd =
          (quad_vlb(with_chol(state, up), data, optimal) -
           quad_vlb(with_chol(state, dn), data, optimal)) / (2 * eps);
      CHECK(fd == Approx(grad_c(r0, c0)).epsilon(1e-3).margin(1e-6));
    }

    // sigma direction: dVLB/dsigma = 2/sigma - 2 sigma/tau^2 + 4 sigma dT/dg
    const double sigma = std::sqrt(state.qv.scale_sq());
    const double grad_sigma = 2.0 / sigma - 2.0 * sigma / state.prior_v.scale_sq() +
                              4.0 * sigma * g.grad_g;
    {
      const double s_up = sigma + eps, s_dn = sigma - eps;
      const double fd = (quad_vlb(with_sigma_sq(state, s_up * s_up), data, optimal) -
                         quad_vlb(with_sigma_sq(state, s_dn * s_dn), data, optimal)) /
                        (2 * eps);
      CHECK(fd == Approx(grad_sigma).epsilon(1e-3).margin(1e-6));
    }
  }
}

TEST_CASE("monte carlo mean gradient matches common-random-number finite differences") {
  Rng rng(2002);
  GmeData data;
  GmeState state = small_instance(LikelihoodModel::logistic(), data, rng);
  GmeEstimator est{40, 80, 777};

  // same seeds at m + eps and m - eps; pathwise derivative equals the
  // assembled estimate exactly up to O(eps^2)
  const double eps = 1e-5;
  VectorXd grad = state.prior_w.precision() * (state.prior_w.mean() - state.qw.mean());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    Rng r(est.stream(i).seed);
    const auto samples = detail::gme_draw(state.qw, est.n_outer, est.n_inner, r);
    const auto t = gme_grad_terms(state, data.X.row(i), data.y[i], samples, true);
    grad += t.c_m * data.X.row(i).transpose();
  }
  for (int k = 0; k < 2; ++k) {
    VectorXd up = state.qw.mean(), dn = state.qw.mean();
    up[k] += eps;
    dn[k] -= eps;
    const double v_up = gme_vlb_optimal(with_mean(state, up), data, est);
    const double v_dn = gme_vlb_optimal(with_mean(state, dn), data, est);
    CHECK((v_up - v_dn) / (2 * eps) == Approx(grad[k]).epsilon(1e-3).margin(1e-5));
  }
}

TEST_CASE("gaussian likelihood reduces the hessian term to its analytic value") {
  // phi(w1, w2) = N(y | w1.x, noise + w2), so hess scalar = -1/(noise + w2)
  const double noise = 0.8;
  GmeState state = GmeState::init(2, LikelihoodModel::gaussian(noise), 4.0, 1.0, 1e-10);
  VectorXd x(2);
  x << 1.0, -0.5;
  const double y = 0.3;

  std::vector<double> estimates;
  for (int rep = 0; rep < 40; ++rep) {
    Rng rng(9000 + rep);
    const auto t = gme_optimal_grad_terms(state, x, y, 10, 400, rng);
    estimates.push_back(t.c_H);
  }
  const auto ms = test_support::mean_stderr(estimates);
  CHECK(std::abs(ms.mean - (-1.0 / noise)) < 3.0 * ms.stderr_ + 2e-3);
}

TEST_CASE("symmetric case gives vanishing mean gradient") {
  GmeState state = GmeState::init(2, LikelihoodModel::gaussian(1.0), 4.0, 1.0, 0.5);
  VectorXd x(2);
  x << 0.7, 0.2;
  const double y = x.dot(state.qw.mean());  // y at the predictive mode

  std::vector<double> estimates;
  for (int rep = 0; rep < 40; ++rep) {
    Rng rng(500 + rep);
    const auto t = gme_optimal_grad_terms(state, x, y, 10, 100, rng);
    estimates.push_back(t.c_m);
  }
  const auto ms = test_support::mean_stderr(estimates);
  CHECK(std::abs(ms.mean) < 3.0 * ms.stderr_);
}

TEST_CASE("zero data natural step recovers both priors") {
  GmeState state = GmeState::init(3, LikelihoodModel::logistic(), 25.0);
  GmeData empty;
  empty.X.resize(0, 3);
  empty.y.resize(0);
  auto next = gme_update(state, empty, {}, Engine::mcssvi, 1.0, StandardStep::fixed(0.1),
                         StandardStep::fixed(0.1), StandardStep::fixed(0.1), GmeEstimator{},
                         true);
  CHECK((next.qw.mean() - state.prior_w.mean()).norm() < 1e-12);
  CHECK((next.qw.cov() - state.prior_w.cov()).norm() < 1e-10);
  CHECK(next.qv.scale_sq() == Approx(state.prior_v.scale_sq()));
}

TEST_CASE("suboptimal gaussian covariance update matches hand computation") {
  Rng rng(3003);
  const double noise = 0.6;
  GmeData data = synth_gme(6, 2, LikelihoodModel::gaussian(noise), 4.0, 77);
  GmeState state = GmeState::init(2, LikelihoodModel::gaussian(noise), 4.0, 10.0, 1.2);
  auto next = gme_suboptimal_updates(state, data, full_batch(6), Engine::mcssvi, 1.0,
                                     StandardStep::fixed(0.1), StandardStep::fixed(0.1),
                                     StandardStep::fixed(0.1), GmeEstimator{5, 20, 42});
  // d2 log p is the constant -1/noise, so the expectation is exact
  const MatrixXd expected =
      state.prior_w.precision() + data.X.transpose() * data.X / noise;
  CHECK((next.qw.precision() - expected).norm() < 1e-8 * expected.norm());
}

TEST_CASE("natural sigma step sign bookkeeping") {
  // with nonpositive curvature terms the natural parameter moves below the
  // data-free blend, i.e. sigma^2 shrinks relative to prior recovery
  const double sigma_sq = 2.0, tau_sq = 5.0, rho = 0.5;
  const double theta = -1.0 / (2.0 * sigma_sq);
  const double theta_prior = -1.0 / (2.0 * tau_sq);
  const double data_free = natural_blend(theta, theta_prior, rho);
  for (double sum_g : {-0.01, -0.1, -1.0}) {
    const double with_data = natural_blend(theta, theta_prior + sum_g, rho);
    CHECK(with_data < data_free);
    CHECK(-1.0 / (2.0 * with_data) < -1.0 / (2.0 * data_free));  // smaller sigma^2
  }
}

TEST_CASE("jensen ordering of the paired bound estimates") {
  Rng rng(4004);
  GmeData data = synth_gme(8, 2, LikelihoodModel::poisson_logistic(10.0), 4.0, 55);
  for (int trial = 0; trial < 20; ++trial) {
    GmeState state = GmeState::init(2, LikelihoodModel::poisson_logistic(10.0), 4.0,
                                    0.5 + rng.uniform(), 0.5 + 2.0 * rng.uniform());
    state.qw = GaussianDist::from_moments(0.5 * rng.normal_vector(2),
                                          (0.5 + rng.uniform()) * MatrixXd::Identity(2, 2));
    const auto pair = gme_vlb_pair(state, data, GmeEstimator{10, 50, static_cast<std::uint64_t>(600 + trial)});
    CHECK(pair.optimal >= pair.suboptimal - 1e-10);  // holds draw by draw
  }
}

TEST_CASE("sigma trajectories stay positive across engines") {
  Rng rng(5005);
  GmeData data = synth_gme(20, 2, LikelihoodModel::logistic(), 4.0, 99);
  for (Engine engine : {Engine::mcssvi, Engine::sdsvi, Engine::hmcssvi}) {
    GmeState state = GmeState::init(2, LikelihoodModel::logistic(), 25.0);
    StepSchedule sched = StepSchedule::one_over_t();
    AdagradState ad_m(2), ad_c(4), ad_s(1);
    for (int it = 0; it < 15; ++it) {
      GuardLog log;
      state = gme_update(state, data, full_batch(20), engine, sched.next(),
                         StandardStep::driven(ad_m), StandardStep::driven(ad_c),
                         StandardStep::driven(ad_s), GmeEstimator{10, 100, static_cast<std::uint64_t>(100 + it)}, true, &log);
      CHECK(state.qv.scale_sq() > 0.0);
      CHECK(is_positive_definite(state.qw.cov()));
    }
  }
}

TEST_CASE("mean field closed forms match a direct linear solve") {
  Rng rng(6006);
  GmeData data = synth_gme(12, 3, LikelihoodModel::gaussian(0.5), 4.0, 31);
  GmeState state = GmeState::init(3, LikelihoodModel::gaussian(0.5), 4.0, 1.0, 2.0);
  auto est = GaussianExpectationEstimator::gh(40);
  auto next = gme_meanfield_updates(state, data, est, 30);

  const double c = std::sqrt(2.0 * M_PI) / std::sqrt(state.qv.scale_sq());
  const MatrixXd prec_expected =
      MatrixXd::Identity(3, 3) + c * data.X.transpose() * data.X;
  CHECK((next.qw.precision() - prec_expected).norm() < 1e-8 * prec_expected.norm());
  // beta used by the solve is the initialization X m0 = 0
  const VectorXd m_expected = prec_expected.ldlt().solve(
      c * data.X.transpose() * (data.X * state.qw.mean()));
  CHECK((next.qw.mean() - m_expected).norm() < 1e-8);
}

TEST_CASE("mean field sigma cubic") {
  // N = 0 recovers the prior scale
  CHECK(gme_mf_sigma_root(4.0, 0.0, 0.0) == Approx(2.0).epsilon(1e-8));
  // no positive root
  CHECK_THROWS_AS(gme_mf_sigma_root(4.0, 8.0, 0.0), Error);
  // root actually zeroes the polynomial
  const double r = gme_mf_sigma_root(2.0, 10.0, 3.0);
  const double p = -(2.0 / 2.0) * r * r * r + (2.0 - 5.0) * r + 3.0;
  CHECK(p == Approx(0.0).margin(1e-9));
}

TEST_CASE("mean field derivative expressions match finite differences of the vlb") {
  Rng rng(7007);
  const double noise = 0.9;
  GmeData data = synth_gme(5, 2, LikelihoodModel::gaussian(noise), 4.0, 13);
  GmeState state = GmeState::init(2, LikelihoodModel::gaussian(noise), 4.0, 0.8, 1.7);
  auto est = GaussianExpectationEstimator::gh(48);
  gme_meanfield_init_locals(state, data);
  state.mf_beta = 0.7 * state.mf_beta.array() + 0.2;  // move off any special point
  state.mf_gamma = VectorXd::Constant(5, 1.3);

  const double eps = 1e-5;
  const double sigma = std::sqrt(state.qv.scale_sq());
  const double c = std::sqrt(2.0 * M_PI) / sigma;

  // d/dm = Sigma^-1 (mu - m) + c sum (beta_i - m.x_i) x_i
  VectorXd grad_m = state.prior_w.precision() * (state.prior_w.mean() - state.qw.mean());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    grad_m += c * (state.mf_beta[i] - data.X.row(i).dot(state.qw.mean())) *
              data.X.row(i).transpose();
  }
  for (int k = 0; k < 2; ++k) {
    GmeState up = state, dn = state;
    VectorXd mu_up = state.qw.mean(), mu_dn = state.qw.mean();
    mu_up[k] += eps;
    mu_dn[k] -= eps;
    up.qw = GaussianDist(mu_up, state.qw.chol());
    dn.qw = GaussianDist(mu_dn, state.qw.chol());
    const double fd =
        (gme_meanfield_vlb(up, data, est) - gme_meanfield_vlb(dn, data, est)) / (2 * eps);
    CHECK(fd == Approx(grad_m[k]).epsilon(1e-4).margin(1e-8));
  }

  // d/dbeta_i = c (m.x_i - beta_i) + E[d1]; d/dgamma_i = -c g + g E[d2] + 1/g
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double mx = data.X.row(i).dot(state.qw.mean());
    const double b = state.mf_beta[i];
    const double g = state.mf_gamma[i];
    const double grad_b = c * (mx - b) + (data.y[i] - b) / noise;
    const double grad_g = -c * g + g * (-1.0 / noise) + 1.0 / g;

    GmeState up = state, dn = state;
    up.mf_beta[i] += eps;
    dn.mf_beta[i] -= eps;
    double fd = (gme_meanfield_vlb(up, data, est) - gme_meanfield_vlb(dn, data, est)) / (2 * eps);
    CHECK(fd == Approx(grad_b).epsilon(1e-4).margin(1e-8));

    up = state;
    dn = state;
    up.mf_gamma[i] += eps;
    dn.mf_gamma[i] -= eps;
    fd = (gme_meanfield_vlb(up, data, est) - gme_meanfield_vlb(dn, data, est)) / (2 * eps);
    CHECK(fd == Approx(grad_g).epsilon(1e-4).margin(1e-8));
  }

  // d/dsigma = 2/sigma - 2 sigma/tau^2 + sum_i (-1/(2 sigma) + sqrt(2 pi) z_i/(2 sigma^2))
  double grad_s = 2.0 / sigma - 2.0 * sigma / state.prior_v.scale_sq();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    grad_s += -0.5 / sigma + 0.5 * std::sqrt(2.0 * M_PI) * gme_mf_z(state, data, i) /
                              (sigma * sigma);
  }
  GmeState su = state, sd = state;
  su.qv = RayleighDist((sigma + eps) * (sigma + eps));
  sd.qv = RayleighDist((sigma - eps) * (sigma - eps));
  const double fd_sigma =
      (gme_meanfield_vlb(su, data, est) - gme_meanfield_vlb(sd, data, est)) / (2 * eps);
  CHECK(fd_sigma == Approx(grad_s).epsilon(1e-4).margin(1e-8));
}

TEST_CASE("mean field locals reach stationarity of their subproblem") {
  const double noise = 0.9;
  GmeData data = synth_gme(5, 2, LikelihoodModel::gaussian(noise), 4.0, 13);
  GmeState cur = GmeState::init(2, LikelihoodModel::gaussian(noise), 4.0, 1.0, 1.7);
  auto est = GaussianExpectationEstimator::gh(48);
  for (int pass = 0; pass < 10; ++pass) cur = gme_meanfield_updates(cur, data, est, 100);
  // freeze the globals and polish the local subproblem
  cur = gme_meanfield_locals(cur, data, est, 2000);

  const double c = std::sqrt(2.0 * M_PI) / std::sqrt(cur.qv.scale_sq());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double mx = data.X.row(i).dot(cur.qw.mean());
    const double resid = c * (mx - cur.mf_beta[i]) + (data.y[i] - cur.mf_beta[i]) / noise;
    CHECK(std::abs(resid) < 1e-6);
    const double g = cur.mf_gamma[i];
    CHECK(std::abs(-c * g - g / noise + 1.0 / g) < 1e-6);
  }
}

TEST_CASE("gme predictive distribution") {
  // collapsed state: predictive equals the plain likelihood at f = m.x
  GmeState state = GmeState::init(2, LikelihoodModel::logistic(), 4.0, 1e-14, 1e-14);
  VectorXd m(2);
  m << 0.4, -0.2;
  state.qw = GaussianDist(m, 1e-7 * MatrixXd::Identity(2, 2));
  VectorXd x(2);
  x << 1.0, 1.0;
  auto pred = gme_predict(state, x, 64);
  const double f = x.dot(m);
  CHECK(pred.log_prob(1.0) == Approx(state.lik.log_lik(1.0, f)).margin(1e-4));

  // gaussian likelihood: predictive symmetric about m.x, so mean = m.x
  GmeState gstate = GmeState::init(2, LikelihoodModel::gaussian(0.5), 4.0, 2.0, 1.5);
  {
    auto gpred = gme_predict(gstate, x, 128);
    const double center = gpred.latent_mean();
    for (double d : {0.3, 1.0, 2.5}) {
      CHECK(gpred.log_prob(center + d) == Approx(gpred.log_prob(center - d)).epsilon(1e-10));
    }
    CHECK(gpred.point_estimate() == Approx(center));
  }

  // count predictive sums to one over the truncated range
  GmeState cstate = GmeState::init(2, LikelihoodModel::poisson_logistic(10.0), 4.0, 1.0, 1.0);
  auto cpred = gme_predict(cstate, x, 128);
  double total = 0.0;
  for (int y = 0; y <= 150; ++y) total += std::exp(cpred.log_prob(y));
  CHECK(total == Approx(1.0).margin(1e-4));
}

TEST_CASE("synthetic gme data admits bound improvement from initialization") {
  GmeData data = synth_gme(25, 2, LikelihoodModel::logistic(), 4.0, 808);
  GmeState state = GmeState::init(2, LikelihoodModel::logistic(), 25.0);
  const GmeEstimator eval{10, 50, 909};
  const double before = gme_vlb_optimal(state, data, eval);
  StepSchedule sched = StepSchedule::one_over_t();
  AdagradState am(2), ac(4), as(1);
  for (int it = 0; it < 10; ++it) {
    state = gme_update(state, data, full_batch(25), Engine::hmcssvi, sched.next(),
                       StandardStep::driven(am), StandardStep::driven(ac),
                       StandardStep::driven(as), GmeEstimator{10, 50, 100ULL + it}, true);
  }
  CHECK(gme_vlb_optimal(state, data, eval) > before);
}
