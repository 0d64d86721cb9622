#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ssvi/errors.hpp"

namespace ssvi {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Zeros everything below the main diagonal.
inline MatrixXd triu(const MatrixXd& m) {
  return m.triangularView<Eigen::Upper>().toDenseMatrix();
}

/// Upper-triangular factor C with m = C^T C. Throws if m is not positive
/// definite.
inline MatrixXd cholesky_upper(const MatrixXd& m) {
  Eigen::LLT<MatrixXd> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) {
    throw DegenerateCovariance("cholesky_upper: matrix is not positive definite");
  }
  return MatrixXd(llt.matrixU());
}

inline bool is_positive_definite(const MatrixXd& m) {
  if (m.rows() == 0) return true;
  Eigen::LLT<MatrixXd> llt(symmetrize(m));
  return llt.info() == Eigen::Success;
}

/// Inverse of an SPD matrix through its Cholesky factorization.
inline MatrixXd spd_inverse(const MatrixXd& m) {
  if (m.rows() == 0) return m;
  Eigen::LLT<MatrixXd> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) {
    throw DegenerateCovariance("spd_inverse: matrix is not positive definite");
  }
  return symmetrize(llt.solve(MatrixXd::Identity(m.rows(), m.cols())));
}

/// log det of an SPD matrix from the diagonal of its Cholesky factor.
inline double spd_log_det(const MatrixXd& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::LLT<MatrixXd> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) {
    throw DegenerateCovariance("spd_log_det: matrix is not positive definite");
  }
  return 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

inline double log_sum_exp(const VectorXd& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace ssvi
