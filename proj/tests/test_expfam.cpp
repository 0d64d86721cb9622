#include <catch2/catch.hpp>

#include "ssvi/expfam.hpp"
#include "ssvi/rng.hpp"

using namespace ssvi;

namespace {

GaussianDist random_gaussian(int dim, Rng& rng) {
  MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
  MatrixXd cov = a * a.transpose() + 0.5 * MatrixXd::Identity(dim, dim);
  VectorXd mean = rng.normal_vector(dim);
  return GaussianDist::from_moments(mean, cov);
}

double kl_from_expectation(const ExpectationParams& eta, const GaussianDist& p) {
  const VectorXd m = eta.h;
  const MatrixXd s = -(eta.H + eta.h * eta.h.transpose());
  return kl_gaussian(GaussianDist::from_moments(m, symmetrize(s)), p);
}

}  // namespace

TEST_CASE("to_natural matches the definition") {
  {
    auto d = GaussianDist::from_moments(VectorXd::Zero(1), 2.0 * MatrixXd::Identity(1, 1));
    auto nat = to_natural(d);
    CHECK(nat.theta1[0] == Approx(0.0).margin(1e-14));
    CHECK(nat.theta2(0, 0) == Approx(0.25));
  }
  {
    auto d = GaussianDist::from_moments(VectorXd::Ones(1), MatrixXd::Identity(1, 1));
    auto nat = to_natural(d);
    CHECK(nat.theta1[0] == Approx(1.0));
    CHECK(nat.theta2(0, 0) == Approx(0.5));
  }
  {
    VectorXd m(2);
    m << 1.0, 0.0;
    auto d = GaussianDist::from_moments(m, MatrixXd::Identity(2, 2));
    auto nat = to_natural(d);
    CHECK(nat.theta1.isApprox(m, 1e-12));
    CHECK(nat.theta2.isApprox(0.5 * MatrixXd::Identity(2, 2), 1e-12));
  }
}

TEST_CASE("to_natural rejects degenerate covariance") {
  MatrixXd cov = MatrixXd::Identity(2, 2);
  cov(1, 1) = 1e-14;
  CHECK_THROWS_AS(GaussianDist::from_moments(VectorXd::Zero(2), cov), DegenerateCovariance);
}

TEST_CASE("to_expectation matches the definition") {
  {
    auto d = GaussianDist::from_moments(VectorXd::Ones(1), MatrixXd::Identity(1, 1));
    auto eta = to_expectation(d);
    CHECK(eta.h[0] == Approx(1.0));
    CHECK(eta.H(0, 0) == Approx(-2.0));
  }
  {
    auto d = GaussianDist::from_moments(VectorXd::Zero(1), 3.0 * MatrixXd::Identity(1, 1));
    auto eta = to_expectation(d);
    CHECK(eta.H(0, 0) == Approx(-3.0));
  }
  {
    auto d = GaussianDist::from_moments(VectorXd::Ones(2), MatrixXd::Identity(2, 2));
    auto eta = to_expectation(d);
    MatrixXd expected(2, 2);
    expected << -2.0, -1.0, -1.0, -2.0;
    CHECK(eta.H.isApprox(expected, 1e-12));
  }
}

TEST_CASE("natural round trip is the identity") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 1 + static_cast<int>(rng.integer(10));
    auto d = random_gaussian(dim, rng);
    auto nat = to_natural(d);
    auto back = GaussianDist::from_natural(nat.theta1, nat.theta2);
    CHECK(back.mean().isApprox(d.mean(), 1e-10));
    CHECK(back.cov().isApprox(d.cov(), 1e-10));
    // expectation view consistency: H = -(S + h h^T) exactly as computed
    auto eta = to_expectation(back);
    CHECK((eta.H + back.cov() + eta.h * eta.h.transpose()).norm() == Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("kl_gaussian closed form") {
  auto std2 = GaussianDist::standard(2);
  CHECK(kl_gaussian(std2, std2) == Approx(0.0).margin(1e-14));

  auto q1 = GaussianDist::from_moments(VectorXd::Ones(1), MatrixXd::Identity(1, 1));
  auto p1 = GaussianDist::standard(1);
  CHECK(kl_gaussian(q1, p1) == Approx(0.5));

  auto q2 = GaussianDist::from_moments(VectorXd::Zero(1), 2.0 * MatrixXd::Identity(1, 1));
  CHECK(kl_gaussian(q2, p1) == Approx(0.5 * (2.0 - 1.0 - std::log(2.0))));

  CHECK_THROWS_AS(kl_gaussian(q1, std2), DimensionError);
}

TEST_CASE("kl_gaussian nonnegative, zero only at equality") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 1 + static_cast<int>(rng.integer(5));
    auto q = random_gaussian(dim, rng);
    auto p = random_gaussian(dim, rng);
    CHECK(kl_gaussian(q, p) >= -1e-12);
    CHECK(kl_gaussian(q, q) == Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("kl_rayleigh analytic values") {
  CHECK(kl_rayleigh(RayleighDist(4.0), RayleighDist(4.0)) == Approx(0.0).margin(1e-14));
  CHECK(kl_rayleigh(RayleighDist(1.0), RayleighDist(2.0)) == Approx(std::log(2.0) - 0.5));
  CHECK(kl_rayleigh(RayleighDist(2.0), RayleighDist(1.0)) == Approx(-std::log(2.0) + 1.0));
  CHECK_THROWS_AS(RayleighDist(-1.0), Error);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    RayleighDist q(0.1 + 5.0 * rng.uniform());
    RayleighDist p(0.1 + 5.0 * rng.uniform());
    CHECK(kl_rayleigh(q, p) >= -1e-12);
  }
}

TEST_CASE("rayleigh views consistent") {
  RayleighDist r(2.5);
  CHECK(r.natural() == Approx(-1.0 / 5.0).epsilon(1e-12));
  CHECK(r.expectation() == Approx(5.0).epsilon(1e-12));
  auto back = RayleighDist::from_natural(r.natural());
  CHECK(back.scale_sq() == Approx(2.5).epsilon(1e-12));
}

TEST_CASE("kl gradient equals natural parameter difference") {
  {
    auto q = GaussianDist::standard(2);
    auto g = kl_grad_wrt_expectation(q, q);
    CHECK(g.theta1.norm() == Approx(0.0).margin(1e-14));
    CHECK(g.theta2.norm() == Approx(0.0).margin(1e-14));
  }
  {
    auto q = GaussianDist::standard(1);
    auto p = GaussianDist::from_moments(VectorXd::Zero(1), 2.0 * MatrixXd::Identity(1, 1));
    auto g = kl_grad_wrt_expectation(q, p);
    CHECK(g.theta1[0] == Approx(0.0).margin(1e-14));
    CHECK(g.theta2(0, 0) == Approx(0.25));
  }
  CHECK(kl_grad_wrt_expectation(RayleighDist(1.0), RayleighDist(2.0)) == Approx(-0.25));
}

TEST_CASE("kl gradient matches finite differences of KL in expectation coords") {
  Rng rng(11);
  const double eps = 1e-6;
  for (int dim : {1, 2}) {
    auto q = random_gaussian(dim, rng);
    auto p = random_gaussian(dim, rng);
    auto grad = kl_grad_wrt_expectation(q, p);
    auto eta = to_expectation(q);

    for (int k = 0; k < dim; ++k) {
      ExpectationParams up = eta, dn = eta;
      up.h[k] += eps;
      dn.h[k] -= eps;
      const double fd = (kl_from_expectation(up, p) - kl_from_expectation(dn, p)) / (2 * eps);
      CHECK(fd == Approx(grad.theta1[k]).epsilon(1e-5).margin(1e-7));
    }
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) {
        ExpectationParams up = eta, dn = eta;
        // symmetric perturbation; diagonal entries move alone
        up.H(i, j) += eps;
        up.H(j, i) = up.H(i, j);
        dn.H(i, j) -= eps;
        dn.H(j, i) = dn.H(i, j);
        const double fd = (kl_from_expectation(up, p) - kl_from_expectation(dn, p)) / (2 * eps);
        const double expected = (i == j) ? grad.theta2(i, i) : 2.0 * grad.theta2(i, j);
        CHECK(fd == Approx(expected).epsilon(1e-5).margin(1e-7));
      }
    }
  }
}

TEST_CASE("gaussian log pdf and sampling are consistent") {
  Rng rng(5);
  auto d = random_gaussian(3, rng);
  // sample moments roughly match (smoke; tight checks live with the models)
  VectorXd acc = VectorXd::Zero(3);
  const int n = 20000;
  for (int i = 0; i < n; ++i) acc += d.sample(rng);
  CHECK((acc / n - d.mean()).norm() < 0.1 * std::sqrt(d.cov().trace()));
  // pdf integrates the right normalizer in 1-D
  auto one = GaussianDist::from_moments(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
  VectorXd x(1);
  x << 0.0;
  CHECK(one.log_pdf(x) == Approx(-0.5 * std::log(2.0 * M_PI)));
}
