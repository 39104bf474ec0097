#pragma once

// Modified theory: each particle carries an energy-time pair (x0, P) on its
// proper-time grid, tied to the spatial motion by
//     x10' = sqrt(2 P1),   P1' = -sqrt(2 P1) v1k F1k,
//     x20' = sqrt(2 P2),   P2' = +sqrt(2 P2) v2l F2l,
// with the light-cone forces F1, F2 generated by the other particle. The
// total proper times are fixed by shooting so that the time coordinates
// reach prescribed out-values; the proper-time integration is never done.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fokker/action.hpp"
#include "fokker/constraint_state.hpp"
#include "fokker/error.hpp"
#include "fokker/grid.hpp"
#include "fokker/kernel.hpp"
#include "fokker/propagator.hpp"
#include "fokker/quadrature.hpp"
#include "fokker/sampling.hpp"
#include "fokker/vec.hpp"

namespace fokker {

/// The self-energy reached zero: the clock stops and the square roots turn
/// imaginary. The engine does not continue through turning points.
class UnsupportedRegime : public Error {
 public:
  using Error::Error;
};

/// Spatial force of one particle projected onto the piecewise-linear basis
/// of its worldline. For interval i with x(t) = x_i + t (x_{i+1} - x_i),
///   lo[i] = int_0^1 (1 - t) F(x(t)) dt,   hi[i] = int_0^1 t F(x(t)) dt.
struct SegmentForces {
  std::vector<Vec3> lo;
  std::vector<Vec3> hi;

  std::size_t n_steps() const { return lo.size(); }
  /// Interval average of the force.
  Vec3 average(std::size_t i) const { return lo[i] + hi[i]; }
  /// Force lumped onto node a (hat-function weight); the two end nodes carry
  /// only the half hat of their single interval.
  Vec3 node(std::size_t a) const {
    Vec3 f{};
    if (a > 0) f = f + hi[a - 1];
    if (a < lo.size()) f = f + lo[a];
    return f;
  }
  /// Contraction with the interval velocities around node a,
  /// v_{a-1} . hi[a-1] + v_a . lo[a].
  double work_at_node(const std::vector<Vec3>& v, std::size_t a) const {
    double w = 0.0;
    if (a > 0) w += euclidean_dot(v[a - 1], hi[a - 1]);
    if (a < lo.size()) w += euclidean_dot(v[a], lo[a]);
    return w;
  }
};

struct ForceField {
  SegmentForces first;
  SegmentForces second;
};

namespace detail {

/// Light-cone force at point x generated by the polygon `source`:
///   2 e1e2 sum_j ds int_0^1 delta'(s12^2) [(x0 - y0) v_j^k - (x^k - y^k) v_j^0] du,
/// y = y_j(u), by Gauss-Legendre in u.
inline Vec3 point_force(const Vec4& x, const Worldline<4>& source, const std::vector<Vec4>& vs,
                        const QuadratureRule& gl, const ModelParams& params) {
  Vec3 acc{};
  for (std::size_t j = 0; j < source.n_steps(); ++j)
    for (std::size_t r = 0; r < gl.nodes.size(); ++r) {
      const Vec4 y = point_on_segment(source, j, gl.nodes[r]);
      const Vec4 d = x - y;
      const double dd =
          gl.weights[r] * regularized_delta_derivative(interval_squared(x, y, params.mode).value,
                                                       params.delta_width);
      for (std::size_t k = 0; k < 3; ++k) acc[k] += dd * (d[0] * vs[j][k + 1] - d[k + 1] * vs[j][0]);
    }
  return (2.0 * params.coupling * source.ds()) * acc;
}

inline SegmentForces project_forces(const Worldline<4>& target, const Worldline<4>& source,
                                    double orientation, const ModelParams& params) {
  const QuadratureRule gl = gauss_legendre_unit(static_cast<std::size_t>(params.segment_points));
  const auto vs = finite_difference_velocity(source);
  SegmentForces f;
  f.lo.assign(target.n_steps(), Vec3{});
  f.hi.assign(target.n_steps(), Vec3{});
  for (std::size_t i = 0; i < target.n_steps(); ++i)
    for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
      const double t = gl.nodes[q];
      const Vec3 F = (orientation * gl.weights[q]) *
                     point_force(point_on_segment(target, i, t), source, vs, gl, params);
      f.lo[i] = f.lo[i] + (1.0 - t) * F;
      f.hi[i] = f.hi[i] + t * F;
    }
  return f;
}

}  // namespace detail

/// Light-cone forces on both worldlines,
///   F1k(x1) = 2 e1e2 int ds2 delta'(s12^2) [(x10 - x20) v2k - (x1k - x2k) v20],
///   F2l(x2) = 2 e1e2 int ds1 delta'(s12^2) [(x10 - x20) v1l - (x1l - x2l) v10],
/// with the spatial index of the second bracket term of F2 matched to l. The
/// source worldline is the polygon through its nodes, integrated per interval
/// with params.segment_points Gauss-Legendre points, and each force is
/// projected onto the hat functions of its own worldline. The projection is
/// what the lattice action differentiates to: for interior nodes
///   -(1/ds1) dI/dx10(a) = first.work_at_node(v1, a),
///   +(1/ds2) dI/dx20(b) = second.work_at_node(v2, b),
/// up to the Gauss-Legendre error, which vanishes as segment_points grows.
inline ForceField compute_forces(const Worldline<4>& wl1, const Worldline<4>& wl2,
                                 const ModelParams& params) {
  ForceField f;
  if (params.coupling == 0.0) {
    f.first.lo.assign(wl1.n_steps(), Vec3{});
    f.first.hi = f.first.lo;
    f.second.lo.assign(wl2.n_steps(), Vec3{});
    f.second.hi = f.second.lo;
    return f;
  }
  f.first = detail::project_forces(wl1, wl2, 1.0, params);
  // F2 as written has the separation oriented x1 - x2.
  f.second = detail::project_forces(wl2, wl1, -1.0, params);
  return f;
}

struct ConstraintBoundary {
  double x0_in = 0.0;
  double P_in = 0.5;
};

struct ConstraintOptions {
  double tolerance = 1e-8;   ///< sup-norm change of x0 between iterates
  int max_iterations = 200;
  double relaxation = 0.5;   ///< weight of the freshly computed forces
};

struct ConstraintSolution {
  ConstraintState first;
  ConstraintState second;
  int iterations = 0;
  double residual = 0.0;  ///< last sup-norm x0 change
};

namespace detail {

/// Advances one particle's (x0, P) along its grid with the forces frozen.
/// P' = sign sqrt(2P) g_i, with g_i = v_i . (interval average of F), is
/// integrated over each interval with classical RK4. The clock obeys the
/// lattice on-shell relation (x0_{i+1} - x0_i) / ds = sqrt(2 Pbar_i) exactly,
/// with Pbar_i the interval average used everywhere else on the lattice.
inline ConstraintState integrate_clock(const Worldline<3>& spatial, const SegmentForces& force,
                                       const ConstraintBoundary& b, double sign) {
  const std::size_t n = spatial.n_steps();
  const double ds = spatial.ds();
  const auto v = finite_difference_velocity(spatial);
  std::vector<double> x0(n + 1), P(n + 1);
  x0[0] = b.x0_in;
  P[0] = b.P_in;

  auto rate = [](double p) {
    if (!(p > 0.0)) throw UnsupportedRegime("self-energy P reached zero (turning point of the clock)");
    return std::sqrt(2.0 * p);
  };

  for (std::size_t i = 0; i < n; ++i) {
    const double g = sign * euclidean_dot(v[i], force.average(i));
    const double p = P[i];
    const double k1 = rate(p) * g;
    const double k2 = rate(p + 0.5 * ds * k1) * g;
    const double k3 = rate(p + 0.5 * ds * k2) * g;
    const double k4 = rate(p + ds * k3) * g;
    P[i + 1] = p + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    x0[i + 1] = x0[i] + ds * rate(0.5 * (P[i] + P[i + 1]));
  }
  return {std::move(x0), std::move(P)};
}

inline double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline void relax(SegmentForces& current, const SegmentForces& fresh, double w) {
  for (std::size_t i = 0; i < current.n_steps(); ++i) {
    current.lo[i] = w * fresh.lo[i] + (1.0 - w) * current.lo[i];
    current.hi[i] = w * fresh.hi[i] + (1.0 - w) * current.hi[i];
  }
}

}  // namespace detail

/// Fixed-point solve of the coupled clock equations: freeze the forces,
/// integrate both (x0, P) pairs, recompute the forces from the updated time
/// coordinates with under-relaxation, repeat until x0 stops changing.
inline ConstraintSolution solve_constraints(const Worldline<3>& wl1, const Worldline<3>& wl2,
                                            const ModelParams& params, const ConstraintBoundary& b1,
                                            const ConstraintBoundary& b2,
                                            const ConstraintOptions& opt = {}) {
  params.validate();
  if (!(b1.P_in > 0.0) || !(b2.P_in > 0.0))
    throw DomainError("solve_constraints: initial self-energies must be > 0");

  ConstraintSolution sol;
  sol.first = ConstraintState::free_flow(wl1.grid().n_nodes(), wl1.ds(), b1.x0_in, b1.P_in);
  sol.second = ConstraintState::free_flow(wl2.grid().n_nodes(), wl2.ds(), b2.x0_in, b2.P_in);
  ForceField force = compute_forces(assemble_worldline(wl1, sol.first),
                                    assemble_worldline(wl2, sol.second), params);

  for (int it = 1; it <= opt.max_iterations; ++it) {
    ConstraintState c1 = detail::integrate_clock(wl1, force.first, b1, -1.0);
    ConstraintState c2 = detail::integrate_clock(wl2, force.second, b2, +1.0);
    const double change =
        std::max(detail::sup_diff(c1.x0, sol.first.x0), detail::sup_diff(c2.x0, sol.second.x0));
    sol.first = std::move(c1);
    sol.second = std::move(c2);
    sol.iterations = it;
    sol.residual = change;
    if (change < opt.tolerance) return sol;
    if (params.coupling == 0.0) return sol;
    const ForceField fresh = compute_forces(assemble_worldline(wl1, sol.first),
                                            assemble_worldline(wl2, sol.second), params);
    detail::relax(force.first, fresh.first, opt.relaxation);
    detail::relax(force.second, fresh.second, opt.relaxation);
  }
  throw NonConvergence("solve_constraints: no convergence after " +
                           std::to_string(opt.max_iterations) + " iterations",
                       sol.residual);
}

/// Sup-norm over intervals of (x0_{i+1} - x0_i)/ds - sqrt(2 Pbar_i), the
/// lattice form of the first delta-function argument.
inline double on_shell_residual(const Worldline<3>& spatial, const ConstraintState& c) {
  double worst = 0.0;
  for (std::size_t i = 0; i < spatial.n_steps(); ++i) {
    const double dx0 = (c.x0[i + 1] - c.x0[i]) / spatial.ds();
    worst = std::max(worst, std::abs(dx0 - std::sqrt(c.P[i] + c.P[i + 1])));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Shooting in proper time.

/// Spatial node sequences and boundary data for both particles. The total
/// proper times are free: the spatial nodes are reparametrized uniformly.
struct ShootingProblem {
  Worldline<3> spatial1;
  Worldline<3> spatial2;
  ConstraintBoundary boundary1;
  ConstraintBoundary boundary2;
  ModelParams params;
  ConstraintOptions solver{1e-12, 400, 0.5};
  double s_max = 1e3;
  double x0_tolerance = 1e-10;

  /// End time coordinate of particle `which` for total proper times (S1, S2).
  double clock_end(int which, double S1, double S2) const {
    const auto sol = solve(S1, S2);
    return which == 1 ? sol.first.x0.back() : sol.second.x0.back();
  }

  ConstraintSolution solve(double S1, double S2) const {
    return solve_constraints(spatial1.with_total_time(S1), spatial2.with_total_time(S2), params,
                             boundary1, boundary2, solver);
  }

  const ConstraintBoundary& boundary(int which) const { return which == 1 ? boundary1 : boundary2; }
};

struct ShootResult {
  double S = 0.0;
  double x0_end = 0.0;
  double residual = 0.0;
  int evaluations = 0;
};

/// Finds S for particle `which` (the other particle's proper time held at
/// s_other) such that its clock reaches target_x0_out. Safeguarded Newton on
/// the monotone map S -> x0(S): secant derivatives inside a maintained
/// bracket, bisection whenever a step leaves it.
inline ShootResult shoot_proper_time(const ShootingProblem& prob, int which, double target_x0_out,
                                     double s_other, std::optional<double> hint = std::nullopt) {
  if (which != 1 && which != 2) throw DomainError("shoot_proper_time: particle must be 1 or 2");
  const ConstraintBoundary& b = prob.boundary(which);
  if (!(b.P_in > 0.0)) throw DomainError("shoot_proper_time: P_in must be > 0");
  if (!(target_x0_out > b.x0_in))
    throw DomainError("shoot_proper_time: target not bracketed (must exceed x0_in)");

  ShootResult res;
  auto eval = [&](double S) {
    ++res.evaluations;
    const double x = which == 1 ? prob.clock_end(1, S, s_other) : prob.clock_end(2, s_other, S);
    return x - target_x0_out;
  };

  const double free_rate = std::sqrt(2.0 * b.P_in);
  double guess = hint.value_or((target_x0_out - b.x0_in) / free_rate);
  guess = std::clamp(guess, prob.s_max * 1e-12, prob.s_max);

  // Bracket [lo, hi] with f(lo) < 0 < f(hi), grown geometrically around the guess.
  double lo = guess, hi = guess;
  double flo = eval(guess), fhi = flo;
  if (std::abs(flo) < prob.x0_tolerance) {
    res.S = guess;
    res.x0_end = target_x0_out + flo;
    res.residual = std::abs(flo);
    return res;
  }
  double factor = 1.05;
  if (flo < 0.0) {
    while (fhi < 0.0) {
      if (hi >= prob.s_max)
        throw DomainError("shoot_proper_time: target not bracketed by [0, s_max]");
      lo = hi;
      flo = fhi;
      hi = std::min(hi * factor, prob.s_max);
      fhi = eval(hi);
      if (fhi < flo) throw UnsupportedRegime("shoot_proper_time: clock map is not monotone");
      factor *= factor;
    }
  } else {
    while (flo > 0.0) {
      hi = lo;
      fhi = flo;
      lo = lo / factor;
      if (lo < prob.s_max * 1e-12)
        throw DomainError("shoot_proper_time: target not bracketed by [0, s_max]");
      flo = eval(lo);
      if (flo > fhi) throw UnsupportedRegime("shoot_proper_time: clock map is not monotone");
      factor *= factor;
    }
  }

  // Start from the end with the smaller residual and the free clock rate.
  double s = std::abs(flo) < std::abs(fhi) ? lo : hi;
  double fs = std::abs(flo) < std::abs(fhi) ? flo : fhi;
  double slope = (fhi - flo) / (hi - lo);
  if (!(slope > 0.0)) slope = free_rate;
  for (int iter = 0; iter < 200; ++iter) {
    double next = s - fs / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double fn = eval(next);
    if (fn < 0.0) {
      lo = next;
      flo = fn;
    } else {
      hi = next;
      fhi = fn;
    }
    if (next != s) {
      const double sec = (fn - fs) / (next - s);
      if (sec > 0.0) slope = sec;
    }
    s = next;
    fs = fn;
    if (std::abs(fs) < prob.x0_tolerance || hi - lo < 1e-15 * hi) break;
  }
  if (std::abs(fs) >= prob.x0_tolerance && hi - lo >= 1e-15 * hi)
    throw NonConvergence("shoot_proper_time: no convergence", std::abs(fs));
  res.S = s;
  res.x0_end = target_x0_out + fs;
  res.residual = std::abs(fs);
  return res;
}

struct JointShootResult {
  double S1 = 0.0;
  double S2 = 0.0;
  ConstraintSolution solution;
  int rounds = 0;
};

/// Both proper times at once: alternate single-particle shooting until the
/// pair stops moving.
inline JointShootResult shoot_both(const ShootingProblem& prob, double target1, double target2,
                                   int max_rounds = 50) {
  JointShootResult out;
  out.S1 = (target1 - prob.boundary1.x0_in) / std::sqrt(2.0 * prob.boundary1.P_in);
  out.S2 = (target2 - prob.boundary2.x0_in) / std::sqrt(2.0 * prob.boundary2.P_in);
  if (prob.params.coupling != 0.0) {
    bool done = false;
    for (int r = 1; r <= max_rounds && !done; ++r) {
      const double s1 = shoot_proper_time(prob, 1, target1, out.S2, out.S1).S;
      const double s2 = shoot_proper_time(prob, 2, target2, s1, out.S2).S;
      done = std::abs(s1 - out.S1) < 1e-12 * (1.0 + s1) && std::abs(s2 - out.S2) < 1e-12 * (1.0 + s2);
      out.S1 = s1;
      out.S2 = s2;
      out.rounds = r;
    }
    if (!done) throw NonConvergence("shoot_both: alternating shooting did not settle", 0.0);
  } else {
    if (!(target1 > prob.boundary1.x0_in) || !(target2 > prob.boundary2.x0_in))
      throw DomainError("shoot_both: targets must exceed the initial time coordinates");
  }
  out.solution = prob.solve(out.S1, out.S2);
  return out;
}

// ---------------------------------------------------------------------------
// Constrained estimator.

struct ModifiedBoundary {
  Endpoints<3> spatial;
  double x0_in = 0.0;
  double x0_out = 1.0;
  double P_in = 0.5;

  /// Proper time fixed by the free clock: (x0_out - x0_in) / sqrt(2 P_in).
  double free_proper_time() const { return (x0_out - x0_in) / std::sqrt(2.0 * P_in); }
};

struct ModifiedEstimatorConfig {
  std::size_t n1 = 8;
  std::size_t n2 = 8;
  SamplingConfig sampling{};
  ConstraintOptions solver{1e-11, 400, 0.5};
  double max_skip_fraction = 0.01;
};

/// Free modified kernel of one particle at proper time S:
/// (2 pi hbar S)^{-3/2} exp(-(|dx|^2 / 2S + (2P + m^2) S / 2) / hbar).
inline double free_modified_kernel(const ModifiedBoundary& b, double m, double hbar) {
  const double S = b.free_proper_time();
  const Vec3 d = b.spatial.x_out - b.spatial.x_in;
  return std::pow(2.0 * std::numbers::pi * hbar * S, -1.5) *
         std::exp(-(euclidean_dot(d, d) / (2.0 * S) + 0.5 * (2.0 * b.P_in + m * m) * S) / hbar);
}

struct ModifiedSample {
  double weight = 1.0;
  double S1 = 0.0;
  double S2 = 0.0;
  double P1_out = 0.0;
  double P2_out = 0.0;
};

/// Weight of one spatial bridge pair drawn at the free proper times. The
/// proper times are re-determined by shooting; the reparametrization of the
/// spatial kinetic weight and the per-step normalization are carried as an
/// explicit factor, so the weight is exactly 1 at zero coupling.
inline ModifiedSample modified_weight(const Worldline<3>& b1, const Worldline<3>& b2,
                                      const ModifiedBoundary& mb1, const ModifiedBoundary& mb2,
                                      const ModelParams& params, const ConstraintOptions& solver) {
  ShootingProblem prob{b1, b2, {mb1.x0_in, mb1.P_in}, {mb2.x0_in, mb2.P_in}, params, solver};
  const JointShootResult js = shoot_both(prob, mb1.x0_out, mb2.x0_out);
  const auto w1 = b1.with_total_time(js.S1);
  const auto w2 = b2.with_total_time(js.S2);
  const auto& c1 = js.solution.first;
  const auto& c2 = js.solution.second;

  const auto parts = modified_action_parts(w1, w2, c1, c2, params);
  const double rest = parts.energy1 + parts.energy2 + parts.interaction;
  const double rest_free = 0.5 * (2.0 * mb1.P_in + params.m1 * params.m1) * b1.grid().s_total() +
                           0.5 * (2.0 * mb2.P_in + params.m2 * params.m2) * b2.grid().s_total();

  auto log_jacobian = [&](const Worldline<3>& ref, double S) {
    double sq = 0.0;
    for (std::size_t i = 0; i < ref.n_steps(); ++i) {
      const Vec3 d = ref.node(i + 1) - ref.node(i);
      sq += euclidean_dot(d, d);
    }
    const double n = static_cast<double>(ref.n_steps());
    const double s_ref = ref.grid().s_total();
    return 1.5 * n * std::log(s_ref / S) - sq / (2.0 * params.hbar) * (n / S - n / s_ref);
  };

  const CouplingOperator<3> op(
      delta_table(assemble_worldline(w1, c1), assemble_worldline(w2, c2), params), w1.ds(),
      w2.ds(), params);
  const MeasureDeterminants md = measure_determinants(op);

  ModifiedSample s;
  s.S1 = js.S1;
  s.S2 = js.S2;
  s.P1_out = c1.P.back();
  s.P2_out = c2.P.back();
  s.weight = std::exp(0.5 * md.log_det_A + log_jacobian(b1, js.S1) + log_jacobian(b2, js.S2) -
                      (rest - rest_free) / params.hbar);
  return s;
}

struct ModifiedEstimate {
  PropagatorEstimate kernel;
  double S1_free = 0.0;
  double S2_free = 0.0;
};

/// Ratio-form estimate of the modified kernel with the proper times fixed
/// by the out-time coordinates.
inline ModifiedEstimate estimate_modified_kernel(const ModifiedBoundary& mb1,
                                                 const ModifiedBoundary& mb2,
                                                 const ModelParams& params,
                                                 const ModifiedEstimatorConfig& cfg) {
  params.validate();
  if (params.mode != Mode::Euclidean)
    throw DomainError("estimate_modified_kernel: spatial sampling is defined in Euclidean mode");
  if (!(params.m1 > 0.0) || !(params.m2 > 0.0))
    throw DomainError("estimate_modified_kernel: masses must be > 0");
  for (const auto* b : {&mb1, &mb2}) {
    if (!(b->P_in > 0.0)) throw DomainError("estimate_modified_kernel: P_in must be > 0");
    if (!(b->x0_out > b->x0_in)) throw DomainError("estimate_modified_kernel: x0_out must exceed x0_in");
  }
  if (cfg.sampling.n_samples == 0) throw DomainError("estimate_modified_kernel: need samples");

  ModifiedEstimate out;
  out.S1_free = mb1.free_proper_time();
  out.S2_free = mb2.free_proper_time();
  auto& est = out.kernel;
  est.free_reference = free_modified_kernel(mb1, params.m1, params.hbar) *
                       free_modified_kernel(mb2, params.m2, params.hbar);
  if (params.coupling == 0.0) {
    est.n_samples = cfg.sampling.n_samples;
    est.value = est.free_reference;
    return out;
  }

  const GridSpec g1(cfg.n1, out.S1_free), g2(cfg.n2, out.S2_free);
  const Accumulator acc = run_sampling(cfg.sampling, [&](Rng& rng) -> std::optional<double> {
    const auto b1 = sample_bridge(mb1.spatial.x_in, mb1.spatial.x_out, g1, params.hbar, rng, 1);
    const auto b2 = sample_bridge(mb2.spatial.x_in, mb2.spatial.x_out, g2, params.hbar, rng, 2);
    try {
      return modified_weight(b1, b2, mb1, mb2, params, cfg.solver).weight;
    } catch (const NonConvergence&) {
      return std::nullopt;
    } catch (const UnsupportedRegime&) {
      return std::nullopt;
    } catch (const SingularOperator&) {
      return std::nullopt;
    }
  });
  detail::check_skips(acc.skipped, cfg.sampling.n_samples, cfg.max_skip_fraction,
                      "estimate_modified_kernel");
  est.ratio_mean = acc.mean;
  est.ratio_stderr = acc.stderr_of_mean();
  est.n_samples = acc.count;
  est.skipped = acc.skipped;
  est.value = est.ratio_mean * est.free_reference;
  return out;
}

}  // namespace fokker
