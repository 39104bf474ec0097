#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fokker/error.hpp"

namespace fokker {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Hermite rule for weight exp(-x^2) via Golub-Welsch.
inline QuadratureRule gauss_hermite(std::size_t n) {
  if (n == 0) throw DomainError("gauss_hermite: need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const double b = std::sqrt(0.5 * static_cast<double>(k));
    jacobi(k - 1, k) = b;
    jacobi(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mu0 = std::sqrt(std::numbers::pi);
  for (std::size_t k = 0; k < n; ++k) {
    rule.nodes[k] = eig.eigenvalues()(static_cast<Eigen::Index>(k));
    const double v0 = eig.eigenvectors()(0, static_cast<Eigen::Index>(k));
    rule.weights[k] = mu0 * v0 * v0;
  }
  return rule;
}

/// Gauss-Legendre rule on [0, 1].
inline QuadratureRule gauss_legendre_unit(std::size_t n) {
  if (n == 0) throw DomainError("gauss_legendre: need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const double kk = static_cast<double>(k);
    const double b = kk / std::sqrt(4.0 * kk * kk - 1.0);
    jacobi(k - 1, k) = b;
    jacobi(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    rule.nodes[k] = 0.5 * (eig.eigenvalues()(static_cast<Eigen::Index>(k)) + 1.0);
    const double v0 = eig.eigenvectors()(0, static_cast<Eigen::Index>(k));
    rule.weights[k] = v0 * v0;  // 2 v0^2 on [-1, 1], halved for [0, 1]
  }
  if (n == 1) rule.nodes[0] = 0.5;
  return rule;
}

/// Trapezoid weights on the log-spaced grid s_i = s_min (s_max/s_min)^{i/(n-1)},
/// i.e. the trapezoid rule in u = ln s applied to f(e^u) e^u.
inline std::vector<double> log_trapezoid_weights(const std::vector<double>& s) {
  const std::size_t n = s.size();
  std::vector<double> w(n, 0.0);
  if (n < 2) return w;
  const double du = std::log(s[n - 1] / s[0]) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) w[i] = s[i] * du * ((i == 0 || i + 1 == n) ? 0.5 : 1.0);
  return w;
}

}  // namespace fokker
