#pragma once

// Reference computations written without the library's projected-metric code
// path: dense covariance algebra, tensor quadrature and direct enumeration.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace treedlnm::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// log N(r; 0, cov) by dense Cholesky.
inline double log_normal_density(const VectorXd& r, const MatrixXd& cov) {
  Eigen::LLT<MatrixXd> llt(cov);
  const VectorXd z = llt.matrixL().solve(r);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

/// Covariance of R after integrating gamma ~ N(0, sigma2 c I) out of
/// R = U mu + Z gamma + eps: sigma2 (I + c Z Z').
inline MatrixXd covariate_marginal_cov(const MatrixXd& Z, double sigma2, double c) {
  const auto n = Z.rows();
  return sigma2 * (MatrixXd::Identity(n, n) + c * Z * Z.transpose());
}

/// log p(R) with mu ~ N(0, sigma2 v I) and gamma integrated out, in closed form.
inline double dense_log_marginal(const MatrixXd& U, const MatrixXd& Z, const VectorXd& R, double sigma2, double v,
                                 double c) {
  MatrixXd cov = covariate_marginal_cov(Z, sigma2, c);
  cov += sigma2 * v * U * U.transpose();
  return log_normal_density(R, cov);
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline void gauss_legendre(int m, std::vector<double>& nodes, std::vector<double>& weights) {
  MatrixXd J = MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    J(k, k - 1) = J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(J);
  nodes.resize(static_cast<size_t>(m));
  weights.resize(static_cast<size_t>(m));
  for (int k = 0; k < m; ++k) {
    nodes[static_cast<size_t>(k)] = eig.eigenvalues()[k];
    const double v0 = eig.eigenvectors()(0, k);
    weights[static_cast<size_t>(k)] = 2.0 * v0 * v0;
  }
}

/// log of the integral over mu of N(R; U mu, sigma2 (I + c Z Z')) N(mu; 0, sigma2 v I),
/// by tensor Gauss-Legendre quadrature over a box of +-`width` in whitened
/// coordinates mu = mode + L z, L L' the posterior covariance. Whitening keeps
/// collinear leaf columns (a ridge in mu) resolvable. Supports up to 3 leaves.
inline double quadrature_log_marginal(const MatrixXd& U, const MatrixXd& Z, const VectorXd& R, double sigma2,
                                      double v, double c, int nodes_per_dim = 48, double width = 10.0) {
  const auto B = static_cast<int>(U.cols());
  const MatrixXd cov = covariate_marginal_cov(Z, sigma2, c);
  const Eigen::LLT<MatrixXd> llt(cov);
  const MatrixXd Pu = llt.solve(U);
  // Mode and covariance of the integrand, used only to place the grid.
  MatrixXd prec = U.transpose() * Pu;
  prec.diagonal().array() += 1.0 / (sigma2 * v);
  const MatrixXd post_cov = prec.inverse();
  const VectorXd mode = post_cov * (Pu.transpose() * R);

  const MatrixXd L = Eigen::LLT<MatrixXd>(post_cov).matrixL();
  const double log_jacobian = L.diagonal().array().log().sum();

  std::vector<double> x, w;
  gauss_legendre(nodes_per_dim, x, w);
  const double prior_sd = std::sqrt(sigma2 * v);
  std::vector<double> log_terms;
  std::vector<int> idx(static_cast<size_t>(B), 0);
  VectorXd z(B), mu(B);
  while (true) {
    double log_w = log_jacobian;
    for (int b = 0; b < B; ++b) {
      z[b] = width * x[static_cast<size_t>(idx[static_cast<size_t>(b)])];
      log_w += std::log(width * w[static_cast<size_t>(idx[static_cast<size_t>(b)])]);
    }
    mu = mode + L * z;
    double log_prior = 0.0;
    for (int b = 0; b < B; ++b) {
      log_prior += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(prior_sd) - 0.5 * mu[b] * mu[b] / (prior_sd * prior_sd);
    }
    log_terms.push_back(log_w + log_prior + log_normal_density(R - U * mu, cov));
    int b = 0;
    while (b < B && ++idx[static_cast<size_t>(b)] == nodes_per_dim) idx[static_cast<size_t>(b++)] = 0;
    if (b == B) break;
  }
  double mx = -INFINITY;
  for (double t : log_terms) mx = std::max(mx, t);
  double sum = 0.0;
  for (double t : log_terms) sum += std::exp(t - mx);
  return mx + std::log(sum);
}

/// Kolmogorov limiting tail probability P(sqrt(n) D > lambda).
inline double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Batch-means standard error of the mean of a stationary trace.
inline double batch_means_se(const std::vector<double>& trace, int batches = 100) {
  const size_t size = trace.size() / static_cast<size_t>(batches);
  std::vector<double> means(static_cast<size_t>(batches), 0.0);
  for (int b = 0; b < batches; ++b) {
    for (size_t k = 0; k < size; ++k) means[static_cast<size_t>(b)] += trace[static_cast<size_t>(b) * size + k];
    means[static_cast<size_t>(b)] /= static_cast<double>(size);
  }
  double m = 0.0;
  for (double v : means) m += v;
  m /= batches;
  double var = 0.0;
  for (double v : means) var += (v - m) * (v - m);
  var /= (batches - 1);
  return std::sqrt(var / batches);
}

inline double trace_mean(const std::vector<double>& trace) {
  double s = 0.0;
  for (double v : trace) s += v;
  return s / static_cast<double>(trace.size());
}

}  // namespace treedlnm::oracle
