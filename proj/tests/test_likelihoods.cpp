#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "ssvi/likelihoods.hpp"

using namespace ssvi;

namespace {

// central finite differences of the log-likelihood in f
void check_derivs_fd(const LikelihoodModel& lik, double y, double f, double tol = 1e-5) {
  const double h = 1e-4;
  const double d1 = lik.d1(y, f);
  const double d2 = lik.d2(y, f);
  const double fd1 = (lik.log_lik(y, f + h) - lik.log_lik(y, f - h)) / (2 * h);
  const double fd2 =
      (lik.log_lik(y, f + h) - 2 * lik.log_lik(y, f) + lik.log_lik(y, f - h)) / (h * h);
  CHECK(d1 == Approx(fd1).epsilon(tol).margin(1e-7));
  CHECK(d2 == Approx(fd2).epsilon(10 * tol).margin(1e-4));
}

double sum_exp_loglik(const LikelihoodModel& lik, double f) {
  double total = 0.0;
  switch (lik.kind()) {
    case LikelihoodModel::Kind::logistic:
      total = std::exp(lik.log_lik(-1, f)) + std::exp(lik.log_lik(1, f));
      break;
    case LikelihoodModel::Kind::poisson_logistic:
      for (int y = 0; y < 200; ++y) total += std::exp(lik.log_lik(y, f));
      break;
    case LikelihoodModel::Kind::ordinal:
      for (int y = 1; y <= lik.levels(); ++y) total += std::exp(lik.log_lik(y, f));
      break;
    default:
      total = 1.0;
  }
  return total;
}

}  // namespace

TEST_CASE("log-likelihood derivatives match finite differences") {
  Rng rng(101);
  auto gauss = LikelihoodModel::gaussian(0.7);
  auto logi = LikelihoodModel::logistic();
  auto pois = LikelihoodModel::poisson_logistic(10.0);
  auto ordi = LikelihoodModel::ordinal(5, 2.0, 1.5);  // moderate slope away from saturation
  for (int t = 0; t < 20; ++t) {
    const double f = 3.0 * rng.normal();
    check_derivs_fd(gauss, rng.normal(), f);
    check_derivs_fd(logi, rng.uniform() < 0.5 ? -1.0 : 1.0, f);
    check_derivs_fd(pois, std::floor(5 * rng.uniform()), f);
    check_derivs_fd(ordi, 1 + static_cast<int>(rng.integer(5)), 0.9 * rng.normal());
  }
}

TEST_CASE("log concavity of gaussian and logistic") {
  auto gauss = LikelihoodModel::gaussian(1.3);
  auto logi = LikelihoodModel::logistic();
  Rng rng(33);
  for (int t = 0; t < 100; ++t) {
    const double f = 10.0 * rng.normal();
    CHECK(gauss.d2(rng.normal(), f) <= 0.0);
    CHECK(logi.d2(rng.uniform() < 0.5 ? -1.0 : 1.0, f) <= 0.0);
  }
}

TEST_CASE("likelihoods normalize over the outcome space") {
  for (double f : {-2.0, 0.0, 2.0}) {
    CHECK(sum_exp_loglik(LikelihoodModel::logistic(), f) == Approx(1.0).epsilon(1e-6));
    CHECK(sum_exp_loglik(LikelihoodModel::poisson_logistic(10.0), f) == Approx(1.0).epsilon(1e-6));
    CHECK(sum_exp_loglik(LikelihoodModel::ordinal(5, 100.0, 15.0), f) == Approx(1.0).epsilon(1e-6));
    CHECK(sum_exp_loglik(LikelihoodModel::ordinal(3, 2.0, 1.0), f) == Approx(1e0).epsilon(1e-6));
  }
}

TEST_CASE("invalid outcomes are rejected") {
  CHECK_THROWS_AS(LikelihoodModel::logistic().log_lik(0.5, 0.0), InvalidOutcome);
  CHECK_THROWS_AS(LikelihoodModel::poisson_logistic().log_lik(-1.0, 0.0), InvalidOutcome);
  CHECK_THROWS_AS(LikelihoodModel::ordinal(5).log_lik(6, 0.0), InvalidOutcome);
  CHECK_THROWS_AS(LikelihoodModel::ordinal(5).log_lik(0, 0.0), InvalidOutcome);
}

TEST_CASE("ordinal with two levels reduces to logistic at the cut-point") {
  auto ord = LikelihoodModel::ordinal(2, 1.0, 3.0);  // single cut-point at 0
  auto logi = LikelihoodModel::logistic();
  for (double f : {-2.0, -0.5, 0.0, 1.0, 4.0}) {
    CHECK(ord.log_lik(2, f) == Approx(logi.log_lik(1, f)).epsilon(1e-12));
    CHECK(ord.log_lik(1, f) == Approx(logi.log_lik(-1, f)).epsilon(1e-12));
  }
}

TEST_CASE("steep ordinal concentrates mass at bin centers and stays finite") {
  auto ord = LikelihoodModel::ordinal(5, 100.0, 15.0);
  // bin centers for interior levels are midway between adjacent cut-points
  for (int level = 2; level <= 4; ++level) {
    const double center = 0.5 * (ord.cut_point(level - 1) + ord.cut_point(level));
    CHECK(std::exp(ord.log_lik(level, center)) >= 0.99);
  }
  for (double f : {-1000.0, -500.0, 37.0, 500.0, 1000.0}) {
    for (int level = 1; level <= 5; ++level) {
      const double ll = ord.log_lik(level, f);
      CHECK(std::isfinite(ll));
      CHECK(std::isfinite(ord.d1(level, f)));
    }
  }
}

TEST_CASE("gauss-hermite reproduces gaussian moments") {
  for (int n : {2, 5, 20, 100, 200}) {
    const auto& gh = GaussHermite::cached(n);
    CHECK(gh.expect(0.0, 1.0, [](double x) { return x * x; }) == Approx(1.0).epsilon(1e-10));
    CHECK(gh.expect(0.0, 1.0, [](double) { return 1.0; }) == Approx(1.0).epsilon(1e-12));
    CHECK(gh.expect(2.0, 3.0, [](double x) { return x; }) == Approx(2.0).epsilon(1e-10));
  }
}

TEST_CASE("alpha term analytic cases") {
  auto est = GaussianExpectationEstimator::gh(64);
  auto gauss = LikelihoodModel::gaussian(1.0);
  // E[(y-f)/s2] = 0 at y = m
  CHECK(alpha_term(gauss, 0.7, 0.7, 0.5, est) == Approx(0.0).margin(1e-12));
  // logistic, y=+1, small v: alpha -> sigmoid(-m)
  CHECK(alpha_term(LikelihoodModel::logistic(), 1.0, 0.0, 1e-12, est) == Approx(0.5).epsilon(1e-8));
}

TEST_CASE("alpha term quadrature agrees with large monte carlo") {
  auto logi = LikelihoodModel::logistic();
  const double quad = alpha_term(logi, 1.0, 0.0, 1.0, GaussianExpectationEstimator::gh(100));
  const int n = 1000000;
  Rng rng(99);
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = logi.d1(1.0, rng.normal());
    acc += v;
    acc2 += v * v;
  }
  const double mc = acc / n;
  const double se = std::sqrt((acc2 / n - mc * mc) / n);
  CHECK(std::abs(mc - quad) < 3.0 * se);
}

TEST_CASE("gamma term analytic and derived cases") {
  auto est = GaussianExpectationEstimator::gh(100);
  CHECK(gamma_term(LikelihoodModel::gaussian(2.0), 1.0, 0.3, 0.9, est) == Approx(-0.25));
  CHECK(gamma_term(LikelihoodModel::logistic(), 1.0, 0.0, 1e-12, est) == Approx(-0.125).epsilon(1e-8));

  // gamma equals d/dv E[log p] (finite difference in the variance)
  auto pois = LikelihoodModel::poisson_logistic(10.0);
  const double m = 0.0, v = 1.0, h = 1e-4;
  auto expected_ll = [&](double var) {
    return est.expect(m, var, [&](double f) { return pois.log_lik(3.0, f); });
  };
  const double fd = (expected_ll(v + h) - expected_ll(v - h)) / (2 * h);
  const double g = gamma_term(pois, 3.0, m, v, est);
  CHECK(g < 0.0);
  CHECK(g == Approx(fd).epsilon(1e-4));
}

TEST_CASE("gamma quadrature equals dE/dv for every kind") {
  auto est = GaussianExpectationEstimator::gh(128);
  const double h = 1e-5;
  struct Case {
    LikelihoodModel lik;
    double y;
  };
  std::vector<Case> cases = {{LikelihoodModel::gaussian(0.8), 0.4},
                             {LikelihoodModel::logistic(), -1.0},
                             {LikelihoodModel::poisson_logistic(10.0), 2.0},
                             {LikelihoodModel::ordinal(5, 2.0, 1.5), 3.0}};
  for (const auto& c : cases) {
    const double m = 0.2, v = 0.7;
    auto expected_ll = [&](double var) {
      return est.expect(m, var, [&](double f) { return c.lik.log_lik(c.y, f); });
    };
    const double fd = (expected_ll(v + h) - expected_ll(v - h)) / (2 * h);
    CHECK(gamma_term(c.lik, c.y, m, v, est) == Approx(fd).epsilon(1e-4).margin(1e-9));
  }
}

TEST_CASE("monte carlo estimators are deterministic under seed") {
  auto est = GaussianExpectationEstimator::mc(10, 1234);
  auto logi = LikelihoodModel::logistic();
  const double a1 = alpha_term(logi, 1.0, 0.2, 1.5, est);
  const double a2 = alpha_term(logi, 1.0, 0.2, 1.5, est);
  CHECK(a1 == a2);
  const double b = alpha_term(logi, 1.0, 0.2, 1.5, est.stream(1));
  CHECK(a1 != b);
}

TEST_CASE("monte carlo variance halves when samples double") {
  auto logi = LikelihoodModel::logistic();
  // empirical variance of the estimator across seeds, at n and 2n
  auto var_at = [&](int n) {
    double acc = 0.0, acc2 = 0.0;
    const int reps = 4000;
    for (int r = 0; r < reps; ++r) {
      const double a = alpha_term(logi, 1.0, 0.0, 1.0, GaussianExpectationEstimator::mc(n, 7000 + r));
      acc += a;
      acc2 += a * a;
    }
    const double mean = acc / reps;
    return acc2 / reps - mean * mean;
  };
  std::vector<int> ns = {8, 16, 32, 64, 128};
  // regression slope of log var on log n should be -1 +- 0.2
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int n : ns) {
    const double x = std::log(static_cast<double>(n));
    const double y = std::log(var_at(n));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = ns.size();
  const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  CHECK(slope == Approx(-1.0).margin(0.2));
}

TEST_CASE("gme expectation triple") {
  Rng rng(555);
  // gaussian likelihood, y=0, tiny var: E -> N(0|0,1)
  auto gauss = LikelihoodModel::gaussian(1.0);
  auto t = gme_expectation_triple(gauss, 0.0, 0.0, 1e-16, 100, rng);
  CHECK(t.valid);
  CHECK(t.e() == Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-6));

  // E > 0 for every kind
  for (auto lik : {LikelihoodModel::logistic(), LikelihoodModel::poisson_logistic(10.0)}) {
    auto tr = gme_expectation_triple(lik, 1.0, 0.3, 0.5, 50, rng);
    CHECK(tr.valid);
    CHECK(tr.e() > 0.0);
  }

  // MC within 3 stderr of the quadrature value
  auto logi = LikelihoodModel::logistic();
  const auto quad = gme_expectation_triple_quad(logi, 1.0, 0.0, 1.0, 100);
  const int n = 1000000;
  Rng r2(4242);
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p = std::exp(logi.log_lik(1.0, r2.normal()));
    acc += p;
    acc2 += p * p;
  }
  const double mean = acc / n;
  const double se = std::sqrt((acc2 / n - mean * mean) / n);
  CHECK(std::abs(mean - quad.e()) < 3.0 * se);
}

TEST_CASE("ordinal_loglik free function and telescoping sum") {
  for (double f : {-3.0, 0.0, 5.0}) {
    double total = 0.0;
    for (int y = 1; y <= 4; ++y) total += std::exp(ordinal_loglik(y, f, 4, 3.0, 2.0));
    CHECK(total == Approx(1.0).epsilon(1e-10));
  }
}
