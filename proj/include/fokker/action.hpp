#pragma once

// Fokker action on the lattice, with the light-cone delta replaced by a
// Gaussian nascent delta of width eps in the s^2 variable.
//
// Two evaluation modes:
//   Minkowski  signature (+,-,-,-); the action enters exp(i I / hbar).
//   Euclidean  s -> -i tau, x0 -> -i x4; positive-definite kinetic term,
//              interval continued to -|dx|^2, weight exp(-I_E / hbar).

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fokker/constraint_state.hpp"
#include "fokker/error.hpp"
#include "fokker/grid.hpp"
#include "fokker/quadrature.hpp"
#include "fokker/vec.hpp"

namespace fokker {

enum class Mode { Minkowski, Euclidean };

inline constexpr int kMaxSegmentPoints = 64;

inline const char* to_string(Mode m) { return m == Mode::Minkowski ? "minkowski" : "euclidean"; }

struct ModelParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double coupling = 0.0;  ///< e1*e2
  double hbar = 1.0;
  double delta_width = 0.1;  ///< eps, in units of length^2
  Mode mode = Mode::Euclidean;
  /// Gauss-Legendre points per interval used to average the regulated delta
  /// over each pair of worldline segments; 1 is the plain midpoint rule.
  int segment_points = 1;

  void validate() const {
    if (!(hbar > 0.0) || !std::isfinite(hbar)) throw DomainError("hbar must be > 0");
    if (!(delta_width > 0.0) || !std::isfinite(delta_width))
      throw DomainError("delta_width must be > 0");
    if (!(m1 >= 0.0) || !(m2 >= 0.0) || !std::isfinite(m1) || !std::isfinite(m2))
      throw DomainError("masses must be >= 0");
    if (!std::isfinite(coupling)) throw DomainError("coupling must be finite");
    if (segment_points < 1 || segment_points > kMaxSegmentPoints)
      throw DomainError("segment_points must lie in [1, 64]");
  }

  double mass(int particle) const { return particle == 1 ? m1 : m2; }
};

/// Signed squared separation s12^2 between two worldline points.
struct IntervalSquared {
  double value = 0.0;
};

template <std::size_t D>
double mode_dot(const Vec<D>& a, const Vec<D>& b, Mode mode) {
  return mode == Mode::Minkowski ? minkowski_dot(a, b) : euclidean_dot(a, b);
}

template <std::size_t D>
IntervalSquared interval_squared(const Vec<D>& x1, const Vec<D>& x2, Mode mode) {
  const Vec<D> d = x1 - x2;
  if (mode == Mode::Minkowski) return {minkowski_dot(d, d)};
  return {-euclidean_dot(d, d)};
}

/// Gaussian nascent delta exp(-u^2 / 2 eps^2) / (eps sqrt(2 pi)).
inline double regularized_delta(double u, double eps) {
  const double z = u / eps;
  return std::exp(-0.5 * z * z) / (eps * std::sqrt(2.0 * std::numbers::pi));
}

/// d/du of regularized_delta.
inline double regularized_delta_derivative(double u, double eps) {
  return -u / (eps * eps) * regularized_delta(u, eps);
}

/// Point at fraction t along interval i of a worldline.
template <std::size_t D>
Vec<D> point_on_segment(const Worldline<D>& wl, std::size_t i, double t) {
  return wl.node(i) + t * (wl.node(i + 1) - wl.node(i));
}

/// Regulated delta averaged over each pair of intervals,
///   table(i, j) = int_0^1 int_0^1 delta_eps(s12^2(x1_i(t), x2_j(u))) dt du,
/// by a tensor Gauss-Legendre rule with params.segment_points per axis. With
/// one point this is delta_eps evaluated at the two interval midpoints.
template <std::size_t D>
Eigen::MatrixXd delta_table(const Worldline<D>& wl1, const Worldline<D>& wl2,
                            const ModelParams& params) {
  const QuadratureRule gl = gauss_legendre_unit(static_cast<std::size_t>(params.segment_points));
  const std::size_t q = gl.nodes.size();
  std::vector<Vec<D>> p1, p2;
  p1.reserve(wl1.n_steps() * q);
  p2.reserve(wl2.n_steps() * q);
  for (std::size_t i = 0; i < wl1.n_steps(); ++i)
    for (double t : gl.nodes) p1.push_back(point_on_segment(wl1, i, t));
  for (std::size_t j = 0; j < wl2.n_steps(); ++j)
    for (double u : gl.nodes) p2.push_back(point_on_segment(wl2, j, u));

  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(wl1.n_steps()),
                                                static_cast<Eigen::Index>(wl2.n_steps()));
  for (std::size_t i = 0; i < wl1.n_steps(); ++i)
    for (std::size_t j = 0; j < wl2.n_steps(); ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = 0; b < q; ++b)
          acc += gl.weights[a] * gl.weights[b] *
                 regularized_delta(interval_squared(p1[i * q + a], p2[j * q + b], params.mode).value,
                                   params.delta_width);
      table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc;
    }
  return table;
}

struct ActionParts {
  double kinetic1 = 0.0;  ///< includes the mass term of particle 1
  double kinetic2 = 0.0;
  double interaction = 0.0;
  double total() const { return kinetic1 + kinetic2 + interaction; }
};

/// Lattice Fokker action as a function of velocity slots, with the
/// positions entering only through the precomputed delta table.
template <std::size_t D>
ActionParts action_from_velocities(const std::vector<Vec<D>>& v1, const std::vector<Vec<D>>& v2,
                                   const Eigen::MatrixXd& delta, double ds1, double ds2,
                                   const ModelParams& params) {
  ActionParts parts;
  for (const auto& v : v1) parts.kinetic1 += 0.5 * ds1 * (mode_dot(v, v, params.mode) + params.m1 * params.m1);
  for (const auto& v : v2) parts.kinetic2 += 0.5 * ds2 * (mode_dot(v, v, params.mode) + params.m2 * params.m2);
  if (params.coupling != 0.0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i)
      for (std::size_t j = 0; j < v2.size(); ++j)
        acc += delta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
               mode_dot(v1[i], v2[j], params.mode);
    parts.interaction = params.coupling * ds1 * ds2 * acc;
  }
  return parts;
}

template <std::size_t D>
ActionParts fokker_action_parts(const Worldline<D>& wl1, const Worldline<D>& wl2,
                                const ModelParams& params) {
  if (wl1.n_steps() == 0 || wl2.n_steps() == 0)
    throw DomainError("fokker_action: worldlines need at least one step");
  const auto v1 = finite_difference_velocity(wl1);
  const auto v2 = finite_difference_velocity(wl2);
  if (params.coupling == 0.0) {
    return action_from_velocities(v1, v2, Eigen::MatrixXd(), wl1.ds(), wl2.ds(), params);
  }
  return action_from_velocities(v1, v2, delta_table(wl1, wl2, params), wl1.ds(), wl2.ds(),
                                params);
}

template <std::size_t D>
double fokker_action(const Worldline<D>& wl1, const Worldline<D>& wl2, const ModelParams& params) {
  return fokker_action_parts(wl1, wl2, params).total();
}

/// Interaction term only; this is the quantity whose variation defines the forces.
template <std::size_t D>
double interaction_action(const Worldline<D>& wl1, const Worldline<D>& wl2,
                          const ModelParams& params) {
  return fokker_action_parts(wl1, wl2, params).interaction;
}

struct ModifiedActionParts {
  double energy1 = 0.0;   ///< (1/2) sum ds (2P + m^2), particle 1
  double energy2 = 0.0;
  double kinetic1 = 0.0;  ///< spatial kinetic part, sign set by the mode
  double kinetic2 = 0.0;
  double interaction = 0.0;
  double total() const { return energy1 + energy2 + kinetic1 + kinetic2 + interaction; }
};

inline std::vector<Vec4> spacetime_nodes(const Worldline<3>& spatial, const ConstraintState& c) {
  c.check_matches(spatial.grid().n_nodes());
  std::vector<Vec4> n;
  n.reserve(spatial.grid().n_nodes());
  for (std::size_t i = 0; i < spatial.grid().n_nodes(); ++i)
    n.push_back(join_time(c.x0[i], spatial.node(i)));
  return n;
}

/// Full spacetime worldline from spatial nodes and a constraint state.
inline Worldline<4> assemble_worldline(const Worldline<3>& spatial, const ConstraintState& c) {
  return Worldline<4>(spatial.grid(), spacetime_nodes(spatial, c), spatial.particle_index());
}

/// Lattice modified action
///   1/2 sum ds1 (2P1 -/+ |v1|^2 + m1^2) + (same for 2)
///   + e1e2 sum sum ds1 ds2 delta(s12^2) [sqrt(2P1 2P2) -/+ v1.v2]
/// The upper sign is Minkowski, the lower the Euclidean continuation.
/// P enters through interval averages of the nodal values; the delta is the
/// interval-averaged regulator of the assembled spacetime worldlines.
inline ModifiedActionParts modified_action_parts(const Worldline<3>& wl1, const Worldline<3>& wl2,
                                                 const ConstraintState& c1,
                                                 const ConstraintState& c2,
                                                 const ModelParams& params) {
  c1.check_matches(wl1.grid().n_nodes());
  c2.check_matches(wl2.grid().n_nodes());
  c1.check_nonnegative();
  c2.check_nonnegative();

  const double sign = params.mode == Mode::Minkowski ? -1.0 : 1.0;
  const auto v1 = finite_difference_velocity(wl1);
  const auto v2 = finite_difference_velocity(wl2);
  const auto p1 = c1.midpoint_P();
  const auto p2 = c2.midpoint_P();

  ModifiedActionParts parts;
  for (std::size_t i = 0; i < v1.size(); ++i) {
    parts.energy1 += 0.5 * wl1.ds() * (2.0 * p1[i] + params.m1 * params.m1);
    parts.kinetic1 += 0.5 * wl1.ds() * sign * euclidean_dot(v1[i], v1[i]);
  }
  for (std::size_t j = 0; j < v2.size(); ++j) {
    parts.energy2 += 0.5 * wl2.ds() * (2.0 * p2[j] + params.m2 * params.m2);
    parts.kinetic2 += 0.5 * wl2.ds() * sign * euclidean_dot(v2[j], v2[j]);
  }
  if (params.coupling != 0.0) {
    const Eigen::MatrixXd delta =
        delta_table(assemble_worldline(wl1, c1), assemble_worldline(wl2, c2), params);
    double acc = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i)
      for (std::size_t j = 0; j < v2.size(); ++j)
        acc += delta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
               (std::sqrt(4.0 * p1[i] * p2[j]) + sign * euclidean_dot(v1[i], v2[j]));
    parts.interaction = params.coupling * wl1.ds() * wl2.ds() * acc;
  }
  return parts;
}

inline double modified_action(const Worldline<3>& wl1, const Worldline<3>& wl2,
                              const ConstraintState& c1, const ConstraintState& c2,
                              const ModelParams& params) {
  return modified_action_parts(wl1, wl2, c1, c2, params).total();
}

}  // namespace fokker
