#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace geotext {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Unbounded directions (possible only for singular Gamma) are capped here.
inline constexpr double kQpCoeffCap = 1e6;

/// max_c -c'Gamma c / 2 + c'gamma subject to c >= 0. Construction symmetrizes
/// Gamma and clips slightly negative eigenvalues; genuine indefiniteness throws.
struct QuadProgram {
  MatrixXd Gamma;
  VectorXd gamma;

  QuadProgram(MatrixXd g_mat, VectorXd g_vec)
      : Gamma(std::move(g_mat)), gamma(std::move(g_vec)) {
    if (Gamma.rows() != Gamma.cols() || Gamma.rows() != gamma.size() || gamma.size() < 1)
      throw std::invalid_argument("QuadProgram: dimension mismatch");
    const double scale = std::max(1.0, Gamma.cwiseAbs().maxCoeff());
    if ((Gamma - Gamma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw std::invalid_argument("QuadProgram: Gamma is not symmetric");
    Gamma = 0.5 * (Gamma + Gamma.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Gamma);
    const double emax = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    if (eig.eigenvalues().minCoeff() < -1e-10 * emax)
      throw std::invalid_argument("QuadProgram: Gamma is not PSD");
    if (eig.eigenvalues().minCoeff() < 0.0) {
      const VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
      Gamma = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    }
  }

  int dim() const { return static_cast<int>(gamma.size()); }

  double objective(const VectorXd& c) const {
    return -0.5 * c.dot(Gamma * c) + c.dot(gamma);
  }
};

/// Max violation of the KKT conditions at c: negativity, dual infeasibility on
/// the active set, and complementary slackness.
inline double kkt_residual(const QuadProgram& p, const VectorXd& c) {
  if (c.size() != p.gamma.size()) throw std::invalid_argument("kkt_residual: size mismatch");
  const VectorXd g = p.Gamma * c - p.gamma;  // gradient of the minimized form
  double r = 0.0;
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    r = std::max(r, -c[k]);
    if (c[k] <= 1e-14) r = std::max(r, -g[k]);
    r = std::max(r, std::abs(c[k] * g[k]));
  }
  return r;
}

struct QpResult {
  VectorXd c;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  bool capped = false;
};

/// Projected gradient with backtracking line search plus active-set Newton
/// acceleration on the identified free set. Warm-startable.
inline QpResult qp_solve(const QuadProgram& p, const VectorXd& warm_start,
                         double tol = 1e-8, int max_iters = 500) {
  if (!(tol > 0.0) || max_iters < 1)
    throw std::invalid_argument("qp_solve: bad tolerance or iteration limit");
  const int n = p.dim();
  QpResult res;
  res.c = warm_start.size() == n ? warm_start.cwiseMax(0.0).eval() : VectorXd::Zero(n);

  // f is the minimized form c'Gamma c / 2 - c'gamma.
  const auto f = [&](const VectorXd& c) { return 0.5 * c.dot(p.Gamma * c) - c.dot(p.gamma); };
  const double lip = std::max(p.Gamma.cwiseAbs().rowwise().sum().maxCoeff(), 1e-12);
  const double alpha0 = 1.0 / lip;

  VectorXd g(n), cand(n);
  std::vector<int> free_set;
  free_set.reserve(n);
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    g.noalias() = p.Gamma * res.c - p.gamma;
    res.residual = 0.0;
    for (int k = 0; k < n; ++k) {
      res.residual = std::max(res.residual, -res.c[k]);
      if (res.c[k] <= 1e-14) res.residual = std::max(res.residual, -g[k]);
      res.residual = std::max(res.residual, std::abs(res.c[k] * g[k]));
    }
    if (res.residual <= tol) {
      res.converged = true;
      return res;
    }

    // Newton step on the free set {c_k > 0 or g_k < 0}, others pinned at 0.
    free_set.clear();
    for (int k = 0; k < n; ++k)
      if (res.c[k] > 0.0 || g[k] < 0.0) free_set.push_back(k);
    bool stepped = false;
    if (!free_set.empty()) {
      const int m = static_cast<int>(free_set.size());
      MatrixXd sub(m, m);
      VectorXd rhs(m);
      for (int a = 0; a < m; ++a) {
        rhs[a] = p.gamma[free_set[a]];
        for (int b = 0; b < m; ++b) sub(a, b) = p.Gamma(free_set[a], free_set[b]);
      }
      const VectorXd sol = sub.ldlt().solve(rhs);
      if (sol.allFinite()) {
        cand.setZero();
        for (int a = 0; a < m; ++a) cand[free_set[a]] = sol[a];
        if (cand.minCoeff() >= 0.0) {
          if (f(cand) <= f(res.c) + 1e-12 * (1.0 + std::abs(f(res.c)))) {
            res.c = cand;
            stepped = true;
          }
        } else {
          // Walk toward the subspace minimizer until the first bound.
          double theta = 1.0;
          for (int k = 0; k < n; ++k) {
            const double d = cand[k] - res.c[k];
            if (d < 0.0) theta = std::min(theta, res.c[k] / -d);
          }
          if (theta > 0.0) {
            cand = (res.c + theta * (cand - res.c)).cwiseMax(0.0);
            if (f(cand) < f(res.c)) {
              res.c = cand;
              stepped = true;
            }
          }
        }
      }
    }
    if (stepped) continue;

    // Projected gradient with Armijo backtracking.
    double alpha = alpha0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      cand = (res.c - alpha * g).cwiseMax(0.0);
      if (f(cand) <= f(res.c) + 1e-4 * g.dot(cand - res.c)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted || (cand - res.c).cwiseAbs().maxCoeff() == 0.0) break;  // stagnated
    res.c = cand;
    if (res.c.maxCoeff() > kQpCoeffCap) {
      res.c = res.c.cwiseMin(kQpCoeffCap);
      res.capped = true;
    }
  }
  res.residual = kkt_residual(p, res.c);
  res.converged = res.residual <= tol;
  return res;
}

}  // namespace geotext
