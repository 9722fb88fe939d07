#pragma once

// Independent reference computations for the test suites. Everything here
// goes through Eigen with explicit inverses and dense matrices, never through
// the library's factorization or projection code.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "cnmgp/numcore.hpp"

namespace oracle {

inline Eigen::MatrixXd to_eigen(const cnmgp::Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

inline Eigen::VectorXd to_eigen(const cnmgp::Vector& v) {
  Eigen::VectorXd e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) e(i) = v[i];
  return e;
}

inline cnmgp::Matrix from_eigen(const Eigen::MatrixXd& e) {
  cnmgp::Matrix m(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  return m;
}

inline double min_eigenvalue(const cnmgp::Matrix& m) {
  const Eigen::MatrixXd e = to_eigen(m);
  const Eigen::MatrixXd sym = 0.5 * (e + e.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  return es.eigenvalues().minCoeff();
}

inline cnmgp::Matrix random_normal_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  cnmgp::Matrix m(r, c);
  for (double& x : m.data()) x = n(gen);
  return m;
}

/// B·Bᵀ + ridge·I for standard-normal B.
inline cnmgp::Matrix random_spd(std::size_t n, double ridge, std::mt19937_64& gen) {
  const Eigen::MatrixXd b = to_eigen(random_normal_matrix(n, n, gen));
  Eigen::MatrixXd a = b * b.transpose() + ridge * Eigen::MatrixXd::Identity(n, n);
  return from_eigen(a);
}

/// Random lower-triangular factor with diagonal in [0.5, 1.5].
inline cnmgp::Matrix random_lower(std::size_t n, double scale, std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.5, 1.5);
  cnmgp::Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) l(i, j) = scale * (i == j ? ud(gen) : 0.3 * nd(gen));
  return l;
}

/// Log-density of N(mean, var) at y.
inline double normal_log_pdf(double y, double mean, double var) {
  const double r = y - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * r * r / var;
}

/// Dense sparse-GP marginal: mean K_xz K_zz⁻¹ m, covariance
/// K_xx − K_xz K_zz⁻¹ K_zx + K_xz K_zz⁻¹ S K_zz⁻¹ K_zx with explicit inverses.
struct DenseMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline DenseMoments dense_marginal(const Eigen::MatrixXd& kxx, const Eigen::MatrixXd& kxz, const Eigen::MatrixXd& kzz,
                                   const Eigen::VectorXd& m, const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd kinv = kzz.inverse();
  const Eigen::MatrixXd a = kxz * kinv;
  return {a * m, kxx - a * kxz.transpose() + a * s * a.transpose()};
}

/// Running mean and standard error of a scalar sample.
struct MeanAccumulator {
  double n = 0.0, mean = 0.0, m2 = 0.0;
  void add(double x) {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
  double standard_error() const { return std::sqrt(variance() / n); }
};

}  // namespace oracle
