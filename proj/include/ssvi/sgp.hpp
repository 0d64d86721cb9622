#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ssvi/dataio.hpp"
#include "ssvi/expfam.hpp"
#include "ssvi/linalg.hpp"
#include "ssvi/optim.hpp"

namespace ssvi {

/// Zero-mean RBF kernel with noise; all three hyperparameters positive.
struct KernelSpec {
  double length_scale = 1.0;
  double signal_var = 1.0;
  double noise_var = 0.1;

  double jitter() const { return 1e-8 * signal_var; }

  double operator()(const VectorXd& a, const VectorXd& b) const {
    return signal_var * std::exp(-(a - b).squaredNorm() / (2.0 * length_scale * length_scale));
  }
};

inline MatrixXd kernel_matrix(const KernelSpec& k, const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) out(i, j) = k(a.row(i), b.row(j));
  }
  return out;
}

/// Variational posterior over the inducing values plus everything needed to
/// evaluate bounds and predictions.
struct SgpState {
  MatrixXd Z;
  KernelSpec kernel;
  GaussianDist q;     // N(m, S) over inducing values
  MatrixXd k_ww;      // jittered
  MatrixXd k_ww_inv;

  Eigen::Index num_inducing() const { return Z.rows(); }
};

namespace detail {

struct SgpWork {
  MatrixXd k_ww;
  MatrixXd k_ww_inv;
  MatrixXd h;          // N x M rows h_i^T = k_iw K_ww^-1
  VectorXd c0;         // K_ii - Q_ii
};

inline SgpWork sgp_work(const DesignMatrixData& data, const MatrixXd& z, const KernelSpec& k) {
  SgpWork w;
  w.k_ww = kernel_matrix(k, z, z) + k.jitter() * MatrixXd::Identity(z.rows(), z.rows());
  w.k_ww_inv = spd_inverse(w.k_ww);
  const MatrixXd k_fw = kernel_matrix(k, data.X, z);
  w.h = k_fw * w.k_ww_inv;
  w.c0.resize(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    w.c0[i] = std::max(k.signal_var - w.h.row(i).dot(k_fw.row(i)), 0.0);
  }
  return w;
}

inline SgpState make_state(const MatrixXd& z, const KernelSpec& k, const SgpWork& w,
                           const MatrixXd& a, const VectorXd& b) {
  const MatrixXd s = spd_inverse(w.k_ww_inv + a);
  SgpState st{z, k, GaussianDist::from_moments(s * b, s), w.k_ww, w.k_ww_inv};
  return st;
}

}  // namespace detail

/// Collapsed solution of the weaker bound: per-point Gaussian terms with
/// variance sigma^2.
inline SgpState sgp_suboptimal_solve(const DesignMatrixData& data, const MatrixXd& z,
                                     const KernelSpec& k) {
  const auto w = detail::sgp_work(data, z, k);
  MatrixXd a = MatrixXd::Zero(z.rows(), z.rows());
  VectorXd b = VectorXd::Zero(z.rows());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    a.noalias() += w.h.row(i).transpose() * w.h.row(i) / k.noise_var;
    b += data.y[i] / k.noise_var * w.h.row(i).transpose();
  }
  return detail::make_state(z, k, w, a, b);
}

/// Closed form for the tighter bound; costs a dense N x N solve.
inline SgpState sgp_optimal_solve(const DesignMatrixData& data, const MatrixXd& z,
                                  const KernelSpec& k) {
  const auto w = detail::sgp_work(data, z, k);
  const MatrixXd k_fw = kernel_matrix(k, data.X, z);
  MatrixXd v = kernel_matrix(k, data.X, data.X) - k_fw * w.k_ww_inv * k_fw.transpose();
  v += k.noise_var * MatrixXd::Identity(data.size(), data.size());
  v = symmetrize(v) + k.jitter() * MatrixXd::Identity(data.size(), data.size());
  Eigen::LLT<MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) {
    throw DegenerateCovariance("sgp_optimal_solve: N x N system not positive definite");
  }
  const MatrixXd vinv_b = llt.solve(w.h);      // V^-1 K_fw K_ww^-1
  const MatrixXd a = w.h.transpose() * vinv_b;
  const VectorXd b = w.h.transpose() * llt.solve(data.y);
  return detail::make_state(z, k, w, symmetrize(a), b);
}

/// Variant V1: per-point terms with variance c_i = K_ii - Q_ii + sigma^2.
inline SgpState sgp_v1_solve(const DesignMatrixData& data, const MatrixXd& z,
                             const KernelSpec& k) {
  const auto w = detail::sgp_work(data, z, k);
  MatrixXd a = MatrixXd::Zero(z.rows(), z.rows());
  VectorXd b = VectorXd::Zero(z.rows());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    double ci = w.c0[i] + k.noise_var;
    if (ci <= 0.0) ci = k.jitter();
    a.noalias() += w.h.row(i).transpose() * w.h.row(i) / ci;
    b += data.y[i] / ci * w.h.row(i).transpose();
  }
  return detail::make_state(z, k, w, a, b);
}

/// Objective used by variant V2: -KL plus sum_i log E_q[N(y_i | h_i^T w, c_i)].
inline double sgp_v2_objective(const SgpState& st, const DesignMatrixData& data) {
  const auto w = detail::sgp_work(data, st.Z, st.kernel);
  const GaussianDist prior =
      GaussianDist::from_moments(VectorXd::Zero(st.num_inducing()), st.k_ww);
  double value = -kl_gaussian(st.q, prior);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double t = w.c0[i] + st.kernel.noise_var + w.h.row(i).dot(st.q.cov() * w.h.row(i).transpose());
    const double r = data.y[i] - w.h.row(i).dot(st.q.mean());
    value += -0.5 * std::log(2.0 * M_PI * t) - 0.5 * r * r / t;
  }
  return value;
}

struct SgpV2Result {
  SgpState state;
  std::vector<double> objective_trace;
  bool converged = false;
  bool oscillation_warning = false;
};

/// Variant V2 by coordinate ascent: S from the curvature terms at the current
/// (m, S), then m from the exact stationarity condition at the new S.
inline SgpV2Result sgp_v2_solve(const DesignMatrixData& data, const MatrixXd& z,
                                const KernelSpec& k, int max_iters = 100, double tol = 1e-9) {
  if (max_iters < 1) throw Error("sgp_v2_solve: max_iters must be positive");
  const auto w = detail::sgp_work(data, z, k);
  const Eigen::Index m_dim = z.rows();

  SgpState st{z, k,
              GaussianDist::from_moments(VectorXd::Zero(m_dim), w.k_ww), w.k_ww, w.k_ww_inv};
  SgpV2Result out{st, {}, false, false};
  out.objective_trace.push_back(sgp_v2_objective(st, data));

  SgpState best = st;
  double best_obj = out.objective_trace.back();
  for (int it = 0; it < max_iters; ++it) {
    // curvature terms at current (m, S)
    MatrixXd a = MatrixXd::Zero(m_dim, m_dim);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const double t = w.c0[i] + k.noise_var + w.h.row(i).dot(st.q.cov() * w.h.row(i).transpose());
      const double r = data.y[i] - w.h.row(i).dot(st.q.mean());
      a.noalias() += (t - r * r) / (t * t) * w.h.row(i).transpose() * w.h.row(i);
    }
    MatrixXd prec = symmetrize(w.k_ww_inv + a);
    if (!is_positive_definite(prec)) {
      prec = symmetrize(w.k_ww_inv + psd_project(a));
    }
    const MatrixXd s_new = spd_inverse(prec);

    // stationarity in the mean with the denominators frozen at s_new
    MatrixXd lhs = w.k_ww_inv;
    VectorXd rhs = VectorXd::Zero(m_dim);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const double t = w.c0[i] + k.noise_var + w.h.row(i).dot(s_new * w.h.row(i).transpose());
      lhs.noalias() += w.h.row(i).transpose() * w.h.row(i) / t;
      rhs += data.y[i] / t * w.h.row(i).transpose();
    }
    const VectorXd m_new = lhs.ldlt().solve(rhs);

    const double move = (m_new - st.q.mean()).norm() + (s_new - st.q.cov()).norm();
    st.q = GaussianDist::from_moments(m_new, s_new);
    out.objective_trace.push_back(sgp_v2_objective(st, data));
    if (out.objective_trace.back() > best_obj) {
      best_obj = out.objective_trace.back();
      best = st;
    }
    if (move < tol) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) {
    out.oscillation_warning = true;
    st = best;  // return the best iterate seen
  }
  out.state = st;
  return out;
}

// ---------------------------------------------------------------------------
// bound values

/// Weaker-bound value at the given state (Titsias-style collapsed objective).
inline double sgp_vlb_suboptimal(const SgpState& st, const DesignMatrixData& data) {
  const auto w = detail::sgp_work(data, st.Z, st.kernel);
  const GaussianDist prior =
      GaussianDist::from_moments(VectorXd::Zero(st.num_inducing()), st.k_ww);
  double value = -kl_gaussian(st.q, prior);
  const double s2 = st.kernel.noise_var;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double mi = w.h.row(i).dot(st.q.mean());
    const double vi = w.c0[i] + w.h.row(i).dot(st.q.cov() * w.h.row(i).transpose());
    value += -0.5 * std::log(2.0 * M_PI * s2) - 0.5 * (data.y[i] - mi) * (data.y[i] - mi) / s2 -
             0.5 * vi / s2;
  }
  return value;
}

/// Tighter-bound value: E_q[log N(y | B w, V)] in closed form.
inline double sgp_vlb_optimal(const SgpState& st, const DesignMatrixData& data) {
  const auto w = detail::sgp_work(data, st.Z, st.kernel);
  const GaussianDist prior =
      GaussianDist::from_moments(VectorXd::Zero(st.num_inducing()), st.k_ww);
  const Eigen::Index n = data.size();
  const MatrixXd k_fw = kernel_matrix(st.kernel, data.X, st.Z);
  MatrixXd v = kernel_matrix(st.kernel, data.X, data.X) - k_fw * w.k_ww_inv * k_fw.transpose();
  v += st.kernel.noise_var * MatrixXd::Identity(n, n);
  v = symmetrize(v) + st.kernel.jitter() * MatrixXd::Identity(n, n);
  Eigen::LLT<MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) {
    throw DegenerateCovariance("sgp_vlb_optimal: N x N system not positive definite");
  }
  const VectorXd resid = data.y - w.h * st.q.mean();
  const double log_det = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  const double quad = resid.dot(llt.solve(resid));
  const double trace = (llt.solve(w.h) * st.q.cov() * w.h.transpose()).trace();
  return -kl_gaussian(st.q, prior) -
         0.5 * (n * std::log(2.0 * M_PI) + log_det + quad + trace);
}

// ---------------------------------------------------------------------------
// prediction and evaluation

struct SgpPrediction {
  double mean;
  double var;  // includes the noise variance
};

inline SgpPrediction sgp_predict(const SgpState& st, const VectorXd& x_star) {
  VectorXd k_sw(st.num_inducing());
  for (Eigen::Index j = 0; j < st.num_inducing(); ++j) {
    k_sw[j] = st.kernel(x_star, st.Z.row(j));
  }
  const VectorXd h = st.k_ww_inv * k_sw;
  const double mean = h.dot(st.q.mean());
  const double q_ss = h.dot(k_sw);
  const double var = std::max(st.kernel.signal_var - q_ss, 0.0) + h.dot(st.q.cov() * h) +
                     st.kernel.noise_var;
  return {mean, var};
}

inline double sgp_test_nll(const SgpState& st, const DesignMatrixData& test) {
  double nll = 0.0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const auto p = sgp_predict(st, test.X.row(i));
    nll += 0.5 * std::log(2.0 * M_PI * p.var) +
           0.5 * (test.y[i] - p.mean) * (test.y[i] - p.mean) / p.var;
  }
  return nll / test.size();
}

// ---------------------------------------------------------------------------
// exact GP reference (used for hyperparameter selection and as a baseline)

inline double full_gp_log_marginal(const DesignMatrixData& data, const KernelSpec& k) {
  const Eigen::Index n = data.size();
  MatrixXd gram = kernel_matrix(k, data.X, data.X) +
                  (k.noise_var + k.jitter()) * MatrixXd::Identity(n, n);
  Eigen::LLT<MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw DegenerateCovariance("full_gp_log_marginal: gram matrix not positive definite");
  }
  const double log_det = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (data.y.dot(llt.solve(data.y)) + log_det + n * std::log(2.0 * M_PI));
}

inline SgpPrediction full_gp_predict(const DesignMatrixData& data, const KernelSpec& k,
                                     const VectorXd& x_star) {
  const Eigen::Index n = data.size();
  MatrixXd gram = kernel_matrix(k, data.X, data.X) +
                  (k.noise_var + k.jitter()) * MatrixXd::Identity(n, n);
  Eigen::LLT<MatrixXd> llt(gram);
  VectorXd k_s(n);
  for (Eigen::Index i = 0; i < n; ++i) k_s[i] = k(x_star, data.X.row(i));
  const double mean = k_s.dot(llt.solve(data.y));
  const double var = k.signal_var - k_s.dot(llt.solve(k_s)) + k.noise_var;
  return {mean, var};
}

// ---------------------------------------------------------------------------
// hyperparameter grid search

struct KernelGrids {
  std::vector<double> length_scales;
  std::vector<double> signal_vars;
  std::vector<double> noise_vars;

  /// 20 log-spaced points over length [0.1, 50], signal [0.01, 100],
  /// noise [0.01, 1].
  static KernelGrids defaults(int points_per_interval = 20) {
    KernelGrids g;
    auto logspace = [&](double lo, double hi) {
      std::vector<double> v(points_per_interval);
      for (int i = 0; i < points_per_interval; ++i) {
        const double t = points_per_interval == 1
                             ? 0.0
                             : static_cast<double>(i) / (points_per_interval - 1);
        v[i] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
      }
      return v;
    };
    g.length_scales = logspace(0.1, 50.0);
    g.signal_vars = logspace(0.01, 100.0);
    g.noise_vars = logspace(0.01, 1.0);
    return g;
  }
};

/// Exhaustive scan maximizing the exact log marginal likelihood on the given
/// subset; ties go to the first point in scan order.
inline KernelSpec sgp_grid_search(const DesignMatrixData& subset, const KernelGrids& grids) {
  if (subset.size() == 0) throw Error("sgp_grid_search: empty subset");
  KernelSpec best;
  double best_lml = -std::numeric_limits<double>::infinity();
  bool first = true;
  for (double ls : grids.length_scales) {
    for (double sv : grids.signal_vars) {
      for (double nv : grids.noise_vars) {
        const KernelSpec cand{ls, sv, nv};
        const double lml = full_gp_log_marginal(subset, cand);
        if (first || lml > best_lml) {
          best = cand;
          best_lml = lml;
          first = false;
        }
      }
    }
  }
  return best;
}

/// 1-D function draw from the GP prior plus observation noise.
inline DesignMatrixData synth_sgp(Eigen::Index n, const KernelSpec& k, std::uint64_t seed,
                                  double x_lo = 0.0, double x_hi = 10.0) {
  Rng rng(seed);
  DesignMatrixData data;
  data.X.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) data.X(i, 0) = x_lo + (x_hi - x_lo) * rng.uniform();
  MatrixXd gram = kernel_matrix(k, data.X, data.X) +
                  (k.jitter() + 1e-10) * MatrixXd::Identity(n, n);
  const MatrixXd chol = cholesky_upper(gram);
  const VectorXd f = chol.transpose() * rng.normal_vector(n);
  data.y = f + std::sqrt(k.noise_var) * rng.normal_vector(n);
  return data;
}

}  // namespace ssvi
