#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fokker/error.hpp"

namespace fokker {

/// Time coordinate x0 and self-energy P at every node of one particle's
/// proper-time grid. On shell, 2P equals the squared time velocity.
struct ConstraintState {
  std::vector<double> x0;
  std::vector<double> P;

  ConstraintState() = default;
  ConstraintState(std::vector<double> x0_nodes, std::vector<double> p_nodes)
      : x0(std::move(x0_nodes)), P(std::move(p_nodes)) {
    if (x0.size() != P.size()) throw DomainError("constraint state: x0 and P lengths differ");
  }

  /// Constant P and an affine clock x0(s) = x0_in + sqrt(2P) s.
  static ConstraintState free_flow(std::size_t n_nodes, double ds, double x0_in, double p) {
    if (p < 0.0) throw DomainError("constraint state: P must be >= 0");
    std::vector<double> x(n_nodes), q(n_nodes, p);
    const double rate = std::sqrt(2.0 * p);
    for (std::size_t i = 0; i < n_nodes; ++i) x[i] = x0_in + rate * ds * static_cast<double>(i);
    return {std::move(x), std::move(q)};
  }

  std::size_t size() const noexcept { return x0.size(); }

  void check_matches(std::size_t n_nodes) const {
    if (x0.size() != n_nodes || P.size() != n_nodes)
      throw DomainError("constraint state: expected " + std::to_string(n_nodes) + " nodes");
  }

  void check_nonnegative() const {
    for (double p : P)
      if (p < 0.0) throw DomainError("constraint state: negative self-energy P");
  }

  std::vector<double> midpoint_P() const {
    std::vector<double> m;
    m.reserve(P.empty() ? 0 : P.size() - 1);
    for (std::size_t i = 0; i + 1 < P.size(); ++i) m.push_back(0.5 * (P[i] + P[i + 1]));
    return m;
  }
};

}  // namespace fokker
