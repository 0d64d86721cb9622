#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ssvi/errors.hpp"
#include "ssvi/quadrature.hpp"
#include "ssvi/rng.hpp"

namespace ssvi {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  if (x > 35.0) return x + std::exp(-x);
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

struct LogLikDerivs {
  double value;
  double d1;
  double d2;
};

/// Observation model p(y|f) with first and second derivatives of the
/// log-likelihood in the latent f.
///
/// Outcome encodings: gaussian takes real y; logistic takes y in {-1,+1};
/// poisson_logistic takes counts y in {0,1,...} with rate lambda_max*sigmoid(f);
/// ordinal takes levels 1..L with cut-points spaced delta apart, centered at 0,
/// squashed through a slope-s sigmoid.
class LikelihoodModel {
 public:
  enum class Kind { gaussian, logistic, poisson_logistic, ordinal };

  static LikelihoodModel gaussian(double noise_var) {
    if (!(noise_var > 0.0)) throw Error("gaussian likelihood: noise variance must be positive");
    LikelihoodModel m;
    m.kind_ = Kind::gaussian;
    m.noise_var_ = noise_var;
    return m;
  }

  static LikelihoodModel logistic() {
    LikelihoodModel m;
    m.kind_ = Kind::logistic;
    return m;
  }

  static LikelihoodModel poisson_logistic(double lambda_max = 10.0) {
    if (!(lambda_max > 0.0)) throw Error("poisson_logistic: lambda_max must be positive");
    LikelihoodModel m;
    m.kind_ = Kind::poisson_logistic;
    m.lambda_max_ = lambda_max;
    return m;
  }

  static LikelihoodModel ordinal(int levels, double slope = 100.0, double delta = 15.0) {
    if (levels < 2) throw Error("ordinal: need at least two levels");
    if (!(slope > 0.0) || !(delta > 0.0)) throw Error("ordinal: slope and delta must be positive");
    LikelihoodModel m;
    m.kind_ = Kind::ordinal;
    m.levels_ = levels;
    m.slope_ = slope;
    m.delta_ = delta;
    return m;
  }

  Kind kind() const { return kind_; }
  double noise_var() const { return noise_var_; }
  double lambda_max() const { return lambda_max_; }
  int levels() const { return levels_; }
  double slope() const { return slope_; }
  double delta() const { return delta_; }
  bool discrete() const { return kind_ != Kind::gaussian; }

  double log_lik(double y, double f) const { return eval(y, f).value; }
  double d1(double y, double f) const { return eval(y, f).d1; }
  double d2(double y, double f) const { return eval(y, f).d2; }

  LogLikDerivs eval(double y, double f) const {
    switch (kind_) {
      case Kind::gaussian: {
        const double r = y - f;
        return {-0.5 * std::log(2.0 * M_PI * noise_var_) - 0.5 * r * r / noise_var_,
                r / noise_var_, -1.0 / noise_var_};
      }
      case Kind::logistic: {
        if (y != 1.0 && y != -1.0) throw InvalidOutcome("logistic: outcome must be -1 or +1");
        const double s = sigmoid(f);
        return {-softplus(-y * f), (y > 0.0 ? 1.0 - s : -s), -s * (1.0 - s)};
      }
      case Kind::poisson_logistic: {
        if (y < 0.0 || y != std::floor(y)) {
          throw InvalidOutcome("poisson_logistic: outcome must be a nonnegative integer");
        }
        const double s = sigmoid(f);
        const double lam = lambda_max_ * s;
        const double ll = y * (std::log(lambda_max_) - softplus(-f)) - lam - std::lgamma(y + 1.0);
        const double d1 = (y - lam) * (1.0 - s);
        const double d2 = -lambda_max_ * s * (1.0 - s) * (1.0 - s) - (y - lam) * s * (1.0 - s);
        return {ll, d1, d2};
      }
      case Kind::ordinal:
        return ordinal_eval(static_cast<int>(y), f);
    }
    throw Error("unreachable");
  }

  /// Interior cut-point j in 1..L-1, evenly spaced with gap delta, centered
  /// at zero.
  double cut_point(int j) const { return delta_ * (j - 0.5 * levels_); }

  /// Draws an observation from p(y|f); used by the synthetic generators.
  double sample_y(double f, Rng& rng) const {
    switch (kind_) {
      case Kind::gaussian:
        return f + std::sqrt(noise_var_) * rng.normal();
      case Kind::logistic:
        return rng.uniform() < sigmoid(f) ? 1.0 : -1.0;
      case Kind::poisson_logistic: {
        // inversion sampling; lambda <= lambda_max keeps the loop short
        const double lam = lambda_max_ * sigmoid(f);
        double u = rng.uniform();
        double p = std::exp(-lam);
        double cum = p;
        double y = 0.0;
        while (u > cum && y < 1e6) {
          y += 1.0;
          p *= lam / y;
          cum += p;
        }
        return y;
      }
      case Kind::ordinal: {
        const double u = rng.uniform();
        double cum = 0.0;
        for (int level = 1; level <= levels_; ++level) {
          cum += std::exp(ordinal_eval(level, f).value);
          if (u < cum) return level;
        }
        return levels_;
      }
    }
    throw Error("unreachable");
  }

 private:
  // log[ sigmoid(a) - sigmoid(b) ] with a = s(b_y - f), b = s(b_{y-1} - f),
  // evaluated through log-space ratios so saturated bins stay finite.
  LogLikDerivs ordinal_eval(int level, double f) const {
    if (level < 1 || level > levels_) throw InvalidOutcome("ordinal: level out of range");
    const bool has_upper = level < levels_;   // a finite
    const bool has_lower = level > 1;         // b finite
    const double a = has_upper ? slope_ * (cut_point(level) - f) : 0.0;
    const double b = has_lower ? slope_ * (cut_point(level - 1) - f) : 0.0;

    double ll;        // log p
    double log_ra;    // log( sigmoid'(a) / p )
    double log_rb;    // log( sigmoid'(b) / p )
    if (has_upper && has_lower) {
      const double l1mexp = std::log1p(-std::exp(b - a));
      ll = a - softplus(a) - softplus(b) + l1mexp;
      log_ra = softplus(b) - softplus(a) - l1mexp;
      log_rb = (b - a) + softplus(a) - softplus(b) - l1mexp;
    } else if (has_upper) {
      ll = -softplus(-a);
      log_ra = -softplus(a);
      log_rb = -std::numeric_limits<double>::infinity();
    } else if (has_lower) {
      ll = -softplus(b);
      log_ra = -std::numeric_limits<double>::infinity();
      log_rb = b - softplus(b);
    } else {
      return {0.0, 0.0, 0.0};  // L=1 cannot happen; guarded in factory
    }

    const double ra = std::exp(log_ra);
    const double rb = std::exp(log_rb);
    const double sa = has_upper ? sigmoid(a) : 1.0;
    const double sb = has_lower ? sigmoid(b) : 0.0;
    const double d1 = -slope_ * (ra - rb);
    const double d2 =
        slope_ * slope_ * (ra * (1.0 - 2.0 * sa) - rb * (1.0 - 2.0 * sb)) - d1 * d1;
    return {ll, d1, d2};
  }

  Kind kind_ = Kind::gaussian;
  double noise_var_ = 1.0;
  double lambda_max_ = 10.0;
  int levels_ = 2;
  double slope_ = 100.0;
  double delta_ = 15.0;
};

inline double ordinal_loglik(int level, double f, int levels, double slope, double delta) {
  return LikelihoodModel::ordinal(levels, slope, delta).log_lik(level, f);
}

/// How expectations over a univariate Gaussian are estimated: seeded Monte
/// Carlo during training, Gauss-Hermite quadrature for evaluation.
struct GaussianExpectationEstimator {
  enum class Mode { monte_carlo, gauss_hermite };

  Mode mode = Mode::monte_carlo;
  int n = 10;
  std::uint64_t seed = 0;

  static GaussianExpectationEstimator mc(int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw Error("estimator: need at least one sample");
    return {Mode::monte_carlo, n_samples, seed};
  }

  static GaussianExpectationEstimator gh(int n_points = 100) {
    if (n_points < 1) throw Error("estimator: need at least one point");
    return {Mode::gauss_hermite, n_points, 0};
  }

  /// Same estimator re-seeded for a sub-stream; Gauss-Hermite is unaffected.
  GaussianExpectationEstimator stream(std::uint64_t index) const {
    GaussianExpectationEstimator e = *this;
    if (mode == Mode::monte_carlo) e.seed = detail::splitmix64(seed ^ (index + 0x51ed2701));
    return e;
  }

  template <typename F>
  double expect(double mean, double var, F&& f) const {
    if (!(var > 0.0)) throw Error("estimator: variance must be positive");
    if (mode == Mode::gauss_hermite) {
      return GaussHermite::cached(n).expect(mean, var, std::forward<F>(f));
    }
    Rng rng(seed);
    const double sd = std::sqrt(var);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += f(mean + sd * rng.normal());
    return acc / n;
  }
};

/// alpha_i = E_{N(f|m,v)}[ d/df log p(y|f) ]
inline double alpha_term(const LikelihoodModel& lik, double y, double m, double v,
                         const GaussianExpectationEstimator& est) {
  return est.expect(m, v, [&](double f) { return lik.d1(y, f); });
}

/// gamma_i = 1/2 E_{N(f|m,v)}[ d^2/df^2 log p(y|f) ]
inline double gamma_term(const LikelihoodModel& lik, double y, double m, double v,
                         const GaussianExpectationEstimator& est) {
  return 0.5 * est.expect(m, v, [&](double f) { return lik.d2(y, f); });
}

/// alpha and gamma from one shared sample set.
inline std::pair<double, double> alpha_gamma_terms(const LikelihoodModel& lik, double y, double m,
                                                   double v,
                                                   const GaussianExpectationEstimator& est) {
  if (!(v > 0.0)) throw Error("alpha_gamma_terms: variance must be positive");
  if (est.mode == GaussianExpectationEstimator::Mode::gauss_hermite) {
    return {alpha_term(lik, y, m, v, est), gamma_term(lik, y, m, v, est)};
  }
  Rng rng(est.seed);
  const double sd = std::sqrt(v);
  double a = 0.0, g = 0.0;
  for (int i = 0; i < est.n; ++i) {
    const LogLikDerivs d = lik.eval(y, m + sd * rng.normal());
    a += d.d1;
    g += d.d2;
  }
  return {a / est.n, 0.5 * g / est.n};
}

/// (E, E', E'') = expectations of p, dp/df, d2p/df2 under N(f|mean,var),
/// assembled from log-likelihood derivatives. `log_e` carries log(E) computed
/// by shifted exponentials, and `r1 = E'/E`, `r2 = E''/E` are the
/// shift-invariant ratios the update equations consume.
struct GmeTriple {
  double log_e;
  double r1;
  double r2;
  bool valid;

  double e() const { return std::exp(log_e); }
  double e1() const { return r1 * std::exp(log_e); }
  double e2() const { return r2 * std::exp(log_e); }
};

namespace detail {

template <typename EvalPoint>
GmeTriple gme_triple_from_points(const LikelihoodModel& lik, double y, int n, EvalPoint&& point,
                                 const double* weights) {
  std::vector<double> ll(n), l1(n), l2(n);
  double lmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const LogLikDerivs d = lik.eval(y, point(i));
    ll[i] = d.value;
    l1[i] = d.d1;
    l2[i] = d.d2;
    lmax = std::max(lmax, d.value);
  }
  if (!std::isfinite(lmax)) return {lmax, 0.0, 0.0, false};
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, wtot = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = weights ? weights[i] : 1.0;
    const double e = w * std::exp(ll[i] - lmax);
    s0 += e;
    s1 += e * l1[i];
    s2 += e * (l2[i] + l1[i] * l1[i]);
    wtot += w;
  }
  if (!(s0 > 0.0) || !std::isfinite(s0)) return {-std::numeric_limits<double>::infinity(), 0.0, 0.0, false};
  return {lmax + std::log(s0 / wtot), s1 / s0, s2 / s0, true};
}

}  // namespace detail

inline GmeTriple gme_expectation_triple(const LikelihoodModel& lik, double y, double mean,
                                        double var, int n_inner, Rng& rng) {
  if (!(var > 0.0)) throw Error("gme_expectation_triple: variance must be positive");
  if (n_inner < 1) throw Error("gme_expectation_triple: need at least one sample");
  const double sd = std::sqrt(var);
  std::vector<double> fs(n_inner);
  for (int i = 0; i < n_inner; ++i) fs[i] = mean + sd * rng.normal();
  return detail::gme_triple_from_points(lik, y, n_inner, [&](int i) { return fs[i]; }, nullptr);
}

/// Quadrature version of the triple, for evaluation and oracles.
inline GmeTriple gme_expectation_triple_quad(const LikelihoodModel& lik, double y, double mean,
                                             double var, int n_points = 100) {
  if (!(var > 0.0)) throw Error("gme_expectation_triple_quad: variance must be positive");
  const GaussHermite& gh = GaussHermite::cached(n_points);
  const double scale = std::sqrt(2.0 * var);
  std::vector<double> w(gh.weights.data(), gh.weights.data() + gh.weights.size());
  return detail::gme_triple_from_points(
      lik, y, n_points, [&](int i) { return mean + scale * gh.nodes[i]; }, w.data());
}

}  // namespace ssvi
