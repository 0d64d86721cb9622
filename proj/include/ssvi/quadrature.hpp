#pragma once

#include <cmath>
#include <map>
#include <mutex>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ssvi/errors.hpp"

namespace ssvi {

/// Gauss-Hermite rule for the physicists' weight exp(-x^2). Nodes and weights
/// come from the Golub-Welsch eigendecomposition of the Jacobi matrix, which
/// stays accurate for the few hundred points used here.
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  static GaussHermite compute(int n) {
    if (n < 1) throw Error("GaussHermite: need at least one point");
    GaussHermite rule;
    if (n == 1) {
      rule.nodes = Eigen::VectorXd::Zero(1);
      rule.weights = Eigen::VectorXd::Constant(1, std::sqrt(M_PI));
      return rule;
    }
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1);
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub);
    rule.nodes = es.eigenvalues();
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      const double v0 = es.eigenvectors()(0, i);
      rule.weights[i] = std::sqrt(M_PI) * v0 * v0;
    }
    return rule;
  }

  static const GaussHermite& cached(int n) {
    static std::map<int, GaussHermite> table;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = table.find(n);
    if (it == table.end()) it = table.emplace(n, compute(n)).first;
    return it->second;
  }

  /// E_{N(x|mean,var)}[f(x)]
  template <typename F>
  double expect(double mean, double var, F&& f) const {
    const double scale = std::sqrt(2.0 * var);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i) {
      acc += weights[i] * f(mean + scale * nodes[i]);
    }
    return acc / std::sqrt(M_PI);
  }
};

}  // namespace ssvi
