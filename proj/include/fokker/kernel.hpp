#pragma once

// Momentum-velocity coupling operator of the generalized canonical
// formulation, its exact and perturbative inverses, the quadratic
// Hamiltonian and the determinant measure.
//
// Lattice momenta are variational derivatives of the action divided by the
// slot measure ds. With the weighted pairing
//     <a, b> = sum_i ds1 a1_i . b1_i + sum_j ds2 a2_j . b2_j
// (dot per evaluation mode) the action reads
//     I(v) = 1/2 <v, L v> + 1/2 (m1^2 S1 + m2^2 S2),
//     L = [[1, lambda K12], [lambda K21, 1]],
//     K12[i][j] = ds2 delta_ij,   K21[j][i] = ds1 delta_ij,
// and p = L v. L acts identically on every vector component, so it is
// stored at node level (n1 + n2 square) and the full operator is
// L_nodes (x) 1_D. L is self-adjoint for <.,.>.

#include <cmath>
#include <cstddef>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fokker/action.hpp"
#include "fokker/error.hpp"
#include "fokker/grid.hpp"
#include "fokker/vec.hpp"

namespace fokker {

/// Quantities living on velocity slots of both particles.
template <std::size_t D>
struct SlotField {
  std::vector<Vec<D>> first;   ///< particle 1, n1 slots
  std::vector<Vec<D>> second;  ///< particle 2, n2 slots
};

template <std::size_t D>
using MomentumField = SlotField<D>;
template <std::size_t D>
using VelocityField = SlotField<D>;

/// Condition number above which the exact inverse is refused.
inline constexpr double kMaxCondition = 1e12;

struct MeasureDeterminants {
  double det_M = 1.0;
  double det_A = 1.0;
  double sqrt_det_A = 1.0;
  double log_det_A = 0.0;
};

template <std::size_t D>
class CouplingOperator {
 public:
  CouplingOperator(Eigen::MatrixXd delta, double ds1, double ds2, const ModelParams& params)
      : delta_(std::move(delta)),
        ds1_(ds1),
        ds2_(ds2),
        params_(params),
        cache_(std::make_shared<Cache>()) {
    const auto n1 = delta_.rows();
    const auto n2 = delta_.cols();
    if (n1 < 1 || n2 < 1) throw DomainError("coupling operator: empty grid");
    const double lambda = params.coupling;
    nodes_ = Eigen::MatrixXd::Identity(n1 + n2, n1 + n2);
    nodes_.topRightCorner(n1, n2) = lambda * ds2 * delta_;
    nodes_.bottomLeftCorner(n2, n1) = lambda * ds1 * delta_.transpose();
  }

  Eigen::Index n1() const noexcept { return delta_.rows(); }
  Eigen::Index n2() const noexcept { return delta_.cols(); }
  double ds1() const noexcept { return ds1_; }
  double ds2() const noexcept { return ds2_; }
  double coupling() const noexcept { return params_.coupling; }
  const ModelParams& params() const noexcept { return params_; }
  const Eigen::MatrixXd& delta() const noexcept { return delta_; }

  /// Node-level matrix (n1 + n2 square).
  const Eigen::MatrixXd& node_matrix() const noexcept { return nodes_; }

  /// Full operator on D(n1 + n2) components; index (slot, mu) -> D*slot + mu.
  Eigen::MatrixXd dense() const {
    const auto n = nodes_.rows();
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(n * D, n * D);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b)
        for (Eigen::Index mu = 0; mu < static_cast<Eigen::Index>(D); ++mu)
          full(a * D + mu, b * D + mu) = nodes_(a, b);
    return full;
  }

  /// Block-off-diagonal part lambda K, so that L = 1 + offdiag().
  Eigen::MatrixXd offdiag() const {
    Eigen::MatrixXd k = nodes_;
    k.diagonal().setZero();
    return k;
  }

  /// Slot weights ds (one per node-level index).
  Eigen::VectorXd weights() const {
    Eigen::VectorXd w(n1() + n2());
    w.head(n1()).setConstant(ds1_);
    w.tail(n2()).setConstant(ds2_);
    return w;
  }

  /// Same physics with particle labels exchanged.
  CouplingOperator swapped() const {
    return CouplingOperator(delta_.transpose(), ds2_, ds1_, params_);
  }

  const Eigen::PartialPivLU<Eigen::MatrixXd>& lu() const {
    std::call_once(cache_->once, [this] {
      cache_->lu.compute(nodes_);
      cache_->rcond = cache_->lu.rcond();
    });
    return cache_->lu;
  }

  /// Reciprocal condition estimate of the node matrix (same as the full one).
  double rcond() const {
    lu();
    return cache_->rcond;
  }

  void require_invertible() const {
    const double rc = rcond();
    if (!(rc > 0.0) || 1.0 / rc > kMaxCondition)
      throw SingularOperator("coupling operator is near-singular (condition estimate " +
                             std::to_string(rc > 0.0 ? 1.0 / rc : INFINITY) +
                             "); coupling too large or delta_width too small for the grid");
  }

 private:
  struct Cache {
    std::once_flag once;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    double rcond = 0.0;
  };

  Eigen::MatrixXd delta_;
  double ds1_;
  double ds2_;
  ModelParams params_;
  Eigen::MatrixXd nodes_;
  std::shared_ptr<Cache> cache_;
};

template <std::size_t D>
CouplingOperator<D> build_coupling_operator(const Worldline<D>& wl1, const Worldline<D>& wl2,
                                            const ModelParams& params) {
  return CouplingOperator<D>(delta_table(wl1, wl2, params), wl1.ds(), wl2.ds(), params);
}

namespace detail {

template <std::size_t D>
Eigen::MatrixXd to_matrix(const SlotField<D>& f, Eigen::Index n1, Eigen::Index n2) {
  if (static_cast<Eigen::Index>(f.first.size()) != n1 ||
      static_cast<Eigen::Index>(f.second.size()) != n2)
    throw DomainError("slot field does not match the coupling operator dimensions");
  Eigen::MatrixXd m(n1 + n2, static_cast<Eigen::Index>(D));
  for (Eigen::Index a = 0; a < n1; ++a)
    for (std::size_t mu = 0; mu < D; ++mu) m(a, mu) = f.first[a][mu];
  for (Eigen::Index b = 0; b < n2; ++b)
    for (std::size_t mu = 0; mu < D; ++mu) m(n1 + b, mu) = f.second[b][mu];
  return m;
}

template <std::size_t D>
SlotField<D> from_matrix(const Eigen::MatrixXd& m, Eigen::Index n1, Eigen::Index n2) {
  SlotField<D> f;
  f.first.resize(n1);
  f.second.resize(n2);
  for (Eigen::Index a = 0; a < n1; ++a)
    for (std::size_t mu = 0; mu < D; ++mu) f.first[a][mu] = m(a, mu);
  for (Eigen::Index b = 0; b < n2; ++b)
    for (std::size_t mu = 0; mu < D; ++mu) f.second[b][mu] = m(n1 + b, mu);
  return f;
}

}  // namespace detail

template <std::size_t D>
MomentumField<D> momentum_from_velocity(const CouplingOperator<D>& op, const VelocityField<D>& v) {
  const auto x = detail::to_matrix(v, op.n1(), op.n2());
  return detail::from_matrix<D>(op.node_matrix() * x, op.n1(), op.n2());
}

template <std::size_t D>
VelocityField<D> velocity_from_momentum_exact(const CouplingOperator<D>& op,
                                              const MomentumField<D>& p) {
  op.require_invertible();
  const auto x = detail::to_matrix(p, op.n1(), op.n2());
  return detail::from_matrix<D>(op.lu().solve(x), op.n1(), op.n2());
}

inline constexpr int kMaxSeriesOrder = 8;

/// Truncated Neumann series v = sum_{k<=order} (-lambda K)^k p. Order 1 is the
/// first perturbative correction v1 = p1 - lambda sum ds2 delta p2.
template <std::size_t D>
VelocityField<D> velocity_from_momentum_series(const CouplingOperator<D>& op,
                                               const MomentumField<D>& p, int order) {
  if (order < 0 || order > kMaxSeriesOrder)
    throw DomainError("series order must lie in [0, " + std::to_string(kMaxSeriesOrder) + "]");
  const Eigen::MatrixXd k = op.offdiag();
  Eigen::MatrixXd term = detail::to_matrix(p, op.n1(), op.n2());
  Eigen::MatrixXd sum = term;
  for (int j = 1; j <= order; ++j) {
    term = -(k * term);
    sum += term;
  }
  return detail::from_matrix<D>(sum, op.n1(), op.n2());
}

/// Weighted pairing <a, b> in the operator's evaluation mode.
template <std::size_t D>
double pairing(const CouplingOperator<D>& op, const SlotField<D>& a, const SlotField<D>& b) {
  const Mode mode = op.params().mode;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < a.first.size(); ++i) s1 += mode_dot(a.first[i], b.first[i], mode);
  for (std::size_t j = 0; j < a.second.size(); ++j) s2 += mode_dot(a.second[j], b.second[j], mode);
  return op.ds1() * s1 + op.ds2() * s2;
}

template <std::size_t D>
double mass_term(const CouplingOperator<D>& op) {
  const auto& pr = op.params();
  const double s1 = op.ds1() * static_cast<double>(op.n1());
  const double s2 = op.ds2() * static_cast<double>(op.n2());
  return 0.5 * (pr.m1 * pr.m1 * s1 + pr.m2 * pr.m2 * s2);
}

/// Quadratic form 1/2 <p, L^{-1} p> - 1/2 (m1^2 S1 + m2^2 S2), evaluated
/// from the explicit inverse matrix.
template <std::size_t D>
double hamiltonian(const CouplingOperator<D>& op, const MomentumField<D>& p) {
  op.require_invertible();
  const Eigen::MatrixXd inv = op.lu().inverse();
  const Eigen::MatrixXd x = detail::to_matrix(p, op.n1(), op.n2());
  const Eigen::VectorXd w = op.weights();
  const Mode mode = op.params().mode;
  double q = 0.0;
  for (Eigen::Index a = 0; a < inv.rows(); ++a) {
    Vec<D> pa{};
    for (std::size_t mu = 0; mu < D; ++mu) pa[mu] = x(a, mu);
    for (Eigen::Index b = 0; b < inv.cols(); ++b) {
      Vec<D> pb{};
      for (std::size_t mu = 0; mu < D; ++mu) pb[mu] = x(b, mu);
      q += w(a) * inv(a, b) * mode_dot(pa, pb, mode);
    }
  }
  return 0.5 * q - mass_term(op);
}

/// Generalized Legendre transform H = <p, v(p)> - I_F[v(p)] with the exact
/// velocity solve.
template <std::size_t D>
double hamiltonian_legendre(const CouplingOperator<D>& op, const MomentumField<D>& p) {
  const auto v = velocity_from_momentum_exact(op, p);
  const auto action =
      action_from_velocities(v.first, v.second, op.delta(), op.ds1(), op.ds2(), op.params());
  return pairing(op, p, v) - action.total();
}

/// Determinant measure. A is identified with the coupling operator L itself;
/// the literal inverse of M = L^{-1}/2 is 2L, and the constant 2^dim is a
/// field-independent normalization absorbed in the functional measure.
/// det_M is computed from an explicit inverse, independently of det_A.
template <std::size_t D>
MeasureDeterminants measure_determinants(const CouplingOperator<D>& op) {
  op.require_invertible();
  const auto& lu = op.lu();
  const Eigen::MatrixXd& u = lu.matrixLU();
  double log_abs = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i) log_abs += std::log(std::abs(u(i, i)));
  const double node_det = lu.determinant();
  if (!(node_det > 0.0))
    throw SingularOperator("coupling operator has non-positive determinant; measure undefined");

  const double node_det_inverse = Eigen::PartialPivLU<Eigen::MatrixXd>(lu.inverse()).determinant();

  MeasureDeterminants out;
  const double dim = static_cast<double>(D);
  out.log_det_A = dim * log_abs;
  out.det_A = std::pow(node_det, dim);
  out.det_M = std::pow(node_det_inverse, dim);
  out.sqrt_det_A = std::exp(0.5 * out.log_det_A);
  return out;
}

/// log det L expanded as sum_{k=1}^{order} (-1)^{k+1} tr((lambda K)^k) / k.
/// Odd orders carry zero trace because lambda K is block off-diagonal.
template <std::size_t D>
double log_det_series(const CouplingOperator<D>& op, int order) {
  const Eigen::MatrixXd k = op.offdiag();
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(k.rows(), k.cols());
  double acc = 0.0;
  for (int j = 1; j <= order; ++j) {
    power = power * k;
    const double sign = (j % 2 == 1) ? 1.0 : -1.0;
    acc += sign * power.trace() / static_cast<double>(j);
  }
  return static_cast<double>(D) * acc;
}

}  // namespace fokker
