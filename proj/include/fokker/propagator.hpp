#pragma once

// Euclidean two-proper-time kernel K(S1, S2): Monte Carlo over Brownian
// bridge worldlines, the Gaussian momentum reduction check on tiny lattices,
// and the double proper-time quadrature.
//
// The estimator works with the interacting/free ratio
//     R = E_bridge[ sqrt(det A) exp(-I_int / hbar) ],
// where the bridge law reproduces the discretized free kinetic weight
// including its per-step normalization, so that K = R * free1 * free2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fokker/action.hpp"
#include "fokker/error.hpp"
#include "fokker/grid.hpp"
#include "fokker/kernel.hpp"
#include "fokker/quadrature.hpp"
#include "fokker/random.hpp"
#include "fokker/sampling.hpp"
#include "fokker/vec.hpp"

namespace fokker {

struct PropagatorEstimate {
  double ratio_mean = 1.0;
  double ratio_stderr = 0.0;
  std::size_t n_samples = 1;
  std::size_t skipped = 0;
  double free_reference = 0.0;
  double value = 0.0;
};

/// Brownian bridge from x_in to x_out: a free random walk with per-component
/// increment variance hbar*ds, pinned at both ends.
template <std::size_t D>
Worldline<D> sample_bridge(const Vec<D>& x_in, const Vec<D>& x_out, const GridSpec& grid,
                           double hbar, Rng& rng, int particle_index = 1) {
  const std::size_t n = grid.n_steps();
  std::normal_distribution<double> normal(0.0, std::sqrt(hbar * grid.ds()));
  std::vector<Vec<D>> walk(n + 1, Vec<D>{});
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t k = 0; k < D; ++k) walk[i][k] = walk[i - 1][k] + normal(rng);

  std::vector<Vec<D>> nodes(n + 1);
  const Vec<D> span = x_out - x_in;
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    nodes[i] = x_in + t * span + (walk[i] - t * walk[n]);
  }
  nodes.front() = x_in;
  nodes.back() = x_out;
  return Worldline<D>(grid, std::move(nodes), particle_index);
}

/// (2 pi hbar S)^{-d/2} exp(-(|dx|^2 / 2S + m^2 S / 2) / hbar)
inline double free_kernel_analytic(double dx_squared, double S, double m, double hbar, int d) {
  if (!(S > 0.0)) throw DomainError("free kernel: proper time S must be > 0");
  if (!(hbar > 0.0)) throw DomainError("free kernel: hbar must be > 0");
  return std::pow(2.0 * std::numbers::pi * hbar * S, -0.5 * d) *
         std::exp(-(dx_squared / (2.0 * S) + 0.5 * m * m * S) / hbar);
}

template <std::size_t D>
double free_kernel_analytic(const Vec<D>& x_in, const Vec<D>& x_out, double S, double m,
                            double hbar) {
  const Vec<D> dx = x_out - x_in;
  return free_kernel_analytic(euclidean_dot(dx, dx), S, m, hbar, static_cast<int>(D));
}

/// Closed form of the proper-time integral of free_kernel_analytic over
/// (0, inf):  (2 pi hbar)^{-d/2} 2 (r/m)^{1-d/2} K_{d/2-1}(r m / hbar).
inline double free_proper_time_integral(double r, double m, double hbar, int d) {
  if (!(m > 0.0)) throw DomainError("proper-time integral requires m > 0");
  if (!(r > 0.0) && d >= 2)
    throw DomainError("proper-time integral diverges at coincident endpoints for d >= 2");
  const double nu = 0.5 * d - 1.0;
  return std::pow(2.0 * std::numbers::pi * hbar, -0.5 * d) * 2.0 * std::pow(r / m, -nu) *
         std::cyl_bessel_k(std::abs(nu), r * m / hbar);
}

struct KernelEstimatorConfig {
  std::size_t n1 = 8;  ///< proper-time steps, particle 1
  std::size_t n2 = 8;
  SamplingConfig sampling{};
  double max_skip_fraction = 0.01;
};

namespace detail {

template <std::size_t D>
double interaction_from_delta(const std::vector<Vec<D>>& v1, const std::vector<Vec<D>>& v2,
                              const Eigen::MatrixXd& delta, double ds1, double ds2,
                              const ModelParams& params) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v1.size(); ++i)
    for (std::size_t j = 0; j < v2.size(); ++j)
      acc += delta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
             mode_dot(v1[i], v2[j], params.mode);
  return params.coupling * ds1 * ds2 * acc;
}

inline void check_skips(std::size_t skipped, std::size_t total, double max_fraction,
                        const char* who) {
  if (total > 0 && static_cast<double>(skipped) > max_fraction * static_cast<double>(total))
    throw SingularOperator(std::string(who) + ": " + std::to_string(skipped) + " of " +
                           std::to_string(total) + " samples skipped (limit " +
                           std::to_string(max_fraction * 100.0) + "%)");
}

}  // namespace detail

/// Per-sample weight sqrt(det A) exp(-I_int / hbar) for a worldline pair,
/// or nothing when the coupling operator is singular for that pair.
template <std::size_t D>
std::optional<double> kernel_weight(const Worldline<D>& wl1, const Worldline<D>& wl2,
                                    const ModelParams& params) {
  const CouplingOperator<D> op = build_coupling_operator(wl1, wl2, params);
  MeasureDeterminants det;
  try {
    det = measure_determinants(op);
  } catch (const SingularOperator&) {
    return std::nullopt;
  }
  const double i_int =
      detail::interaction_from_delta(finite_difference_velocity(wl1), finite_difference_velocity(wl2),
                                     op.delta(), wl1.ds(), wl2.ds(), params);
  return std::exp(0.5 * det.log_det_A - i_int / params.hbar);
}

/// Ratio-form Monte Carlo estimate of the Euclidean kernel K(S1, S2).
template <std::size_t D>
PropagatorEstimate estimate_kernel(const Endpoints<D>& p1, const Endpoints<D>& p2, double S1,
                                   double S2, const ModelParams& params,
                                   const KernelEstimatorConfig& cfg) {
  params.validate();
  if (params.mode != Mode::Euclidean)
    throw DomainError("estimate_kernel: sampling is defined in Euclidean mode only");
  if (!(S1 > 0.0) || !(S2 > 0.0)) throw DomainError("estimate_kernel: S1, S2 must be > 0");
  if (cfg.sampling.n_samples == 0) throw DomainError("estimate_kernel: need at least one sample");

  PropagatorEstimate est;
  est.free_reference = free_kernel_analytic(p1.x_in, p1.x_out, S1, params.m1, params.hbar) *
                       free_kernel_analytic(p2.x_in, p2.x_out, S2, params.m2, params.hbar);
  if (params.coupling == 0.0) {
    est.ratio_mean = 1.0;
    est.ratio_stderr = 0.0;
    est.n_samples = cfg.sampling.n_samples;
    est.value = est.free_reference;
    return est;
  }

  const GridSpec g1(cfg.n1, S1), g2(cfg.n2, S2);
  const Accumulator acc = run_sampling(cfg.sampling, [&](Rng& rng) {
    const auto b1 = sample_bridge(p1.x_in, p1.x_out, g1, params.hbar, rng, 1);
    const auto b2 = sample_bridge(p2.x_in, p2.x_out, g2, params.hbar, rng, 2);
    return kernel_weight(b1, b2, params);
  });
  detail::check_skips(acc.skipped, cfg.sampling.n_samples, cfg.max_skip_fraction,
                      "estimate_kernel");
  est.ratio_mean = acc.mean;
  est.ratio_stderr = acc.stderr_of_mean();
  est.n_samples = acc.count;
  est.skipped = acc.skipped;
  est.value = est.ratio_mean * est.free_reference;
  return est;
}

// ---------------------------------------------------------------------------
// Phase-space reduction on tiny lattices.

inline constexpr std::size_t kMaxPhaseSpaceDim = 8;

struct PhaseSpaceReport {
  std::size_t dimension = 0;
  double gaussian_formula = 0.0;     ///< closed-form multivariate Gaussian in p
  double quadrature = 0.0;           ///< tensor Gauss-Hermite over all momenta
  double configuration_form = 0.0;   ///< (2 pi hbar)^{N/2} det(2M)^{-1/2} exp(-I_E/hbar)
  double det_factor = 0.0;           ///< det(2M)^{-1/2}
  double det_factor_from_measure = 0.0;  ///< sqrt(det A) / prod(ds)^{D/2}
  double rel_formula_vs_quadrature = 0.0;
  double rel_formula_vs_configuration = 0.0;
  double rel_det_factor = 0.0;
};

/// Integrates exp((i <p, v> - 1/2 <p, L^{-1} p> - mass term) / hbar) over all
/// lattice momenta, once by the Gaussian formula and once by brute-force
/// quadrature, and compares with the configuration-space weight.
template <std::size_t D>
PhaseSpaceReport verify_phase_space_reduction(const Worldline<D>& wl1, const Worldline<D>& wl2,
                                              const ModelParams& params,
                                              std::size_t points_per_dim = 0) {
  params.validate();
  if (params.mode != Mode::Euclidean)
    throw DomainError("phase-space reduction check runs in Euclidean mode");
  const std::size_t n_slots = wl1.n_steps() + wl2.n_steps();
  const std::size_t N = D * n_slots;
  if (N > kMaxPhaseSpaceDim)
    throw DomainError("phase-space reduction: dimension " + std::to_string(N) + " exceeds cap " +
                      std::to_string(kMaxPhaseSpaceDim));

  const CouplingOperator<D> op = build_coupling_operator(wl1, wl2, params);
  op.require_invertible();
  const double hbar = params.hbar;
  const Eigen::MatrixXd full = op.dense();
  const Eigen::VectorXd w_nodes = op.weights();
  Eigen::VectorXd w(static_cast<Eigen::Index>(N));
  for (std::size_t a = 0; a < n_slots; ++a)
    for (std::size_t mu = 0; mu < D; ++mu) w(a * D + mu) = w_nodes(a);

  // Quadratic form in p: Q = W L^{-1} (symmetric), linear term b = W v.
  const Eigen::MatrixXd Q = w.asDiagonal() * full.inverse();
  const Eigen::MatrixXd Qs = 0.5 * (Q + Q.transpose());
  const auto v1 = finite_difference_velocity(wl1);
  const auto v2 = finite_difference_velocity(wl2);
  Eigen::VectorXd v(static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < v1.size(); ++i)
    for (std::size_t mu = 0; mu < D; ++mu) v(i * D + mu) = v1[i][mu];
  for (std::size_t j = 0; j < v2.size(); ++j)
    for (std::size_t mu = 0; mu < D; ++mu) v((v1.size() + j) * D + mu) = v2[j][mu];
  const Eigen::VectorXd b = w.asDiagonal() * v;
  const double mass = mass_term(op);

  const double norm = std::pow(2.0 * std::numbers::pi * hbar, 0.5 * static_cast<double>(N));
  Eigen::LLT<Eigen::MatrixXd> llt(Qs);
  if (llt.info() != Eigen::Success)
    throw SingularOperator("phase-space reduction: momentum quadratic form not positive definite");
  double log_det_q = 0.0;
  for (Eigen::Index i = 0; i < Qs.rows(); ++i) log_det_q += 2.0 * std::log(llt.matrixL()(i, i));

  PhaseSpaceReport rep;
  rep.dimension = N;
  rep.gaussian_formula =
      norm * std::exp(-0.5 * log_det_q - b.dot(llt.solve(b)) / (2.0 * hbar) - mass / hbar);

  // Configuration-space side: measure det(2M)^{-1/2} with 2M = W L^{-1}.
  rep.det_factor = std::exp(-0.5 * log_det_q);
  const MeasureDeterminants md = measure_determinants(op);
  double log_w = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) log_w += std::log(w(i));
  rep.det_factor_from_measure = std::exp(0.5 * md.log_det_A - 0.5 * log_w);
  const double action = fokker_action(wl1, wl2, params);
  rep.configuration_form = norm * rep.det_factor * std::exp(-action / hbar);

  // Brute-force tensor Gauss-Hermite; each axis is scaled to its diagonal
  // Gaussian width, off-diagonal couplings and the phase stay in the integrand.
  const std::size_t m = points_per_dim != 0 ? points_per_dim : (N <= 4 ? 20 : N <= 6 ? 16 : 8);
  const QuadratureRule gh = gauss_hermite(m);
  Eigen::VectorXd scale(static_cast<Eigen::Index>(N));
  for (std::size_t k = 0; k < N; ++k) scale(k) = std::sqrt(2.0 * hbar / Qs(k, k));
  Eigen::MatrixXd off = Qs;
  off.diagonal().setZero();

  std::vector<std::size_t> idx(N, 0);
  Eigen::VectorXd p(static_cast<Eigen::Index>(N));
  double sum = 0.0;
  for (;;) {
    double weight = 1.0;
    for (std::size_t k = 0; k < N; ++k) {
      p(k) = scale(k) * gh.nodes[idx[k]];
      weight *= gh.weights[idx[k]];
    }
    const double quad_off = p.dot(off * p);
    sum += weight * std::exp(-0.5 * quad_off / hbar) * std::cos(b.dot(p) / hbar);
    std::size_t k = 0;
    while (k < N && ++idx[k] == m) idx[k++] = 0;
    if (k == N) break;
  }
  rep.quadrature = sum * scale.prod() * std::exp(-mass / hbar);

  auto rel = [](double a, double ref) { return std::abs(a - ref) / std::abs(ref); };
  rep.rel_formula_vs_quadrature = rel(rep.quadrature, rep.gaussian_formula);
  rep.rel_formula_vs_configuration = rel(rep.configuration_form, rep.gaussian_formula);
  rep.rel_det_factor = rel(rep.det_factor_from_measure, rep.det_factor);
  return rep;
}

// ---------------------------------------------------------------------------
// Double proper-time integration.

/// Log-spaced proper-time samples over [s_min, s_max] for each particle.
struct ProperTimeGrid {
  double s_min = 1e-3;
  double s_max = 50.0;
  std::size_t count1 = 97;
  std::size_t count2 = 97;

  void validate() const {
    if (!(s_min > 0.0) || !(s_max > s_min))
      throw DomainError("proper-time grid: need 0 < s_min < s_max");
    if (count1 < 3 || count2 < 3) throw DomainError("proper-time grid: need >= 3 points per axis");
  }

  static std::vector<double> points(double lo, double hi, std::size_t count) {
    std::vector<double> s(count);
    const double step = std::log(hi / lo) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) s[i] = lo * std::exp(step * static_cast<double>(i));
    s.back() = hi;
    return s;
  }

  std::vector<double> axis1() const { return points(s_min, s_max, count1); }
  std::vector<double> axis2() const { return points(s_min, s_max, count2); }
};

struct ProperTimeResult {
  double value = 0.0;
  double error = 0.0;  ///< quadrature + tails + statistical, combined
  double quadrature_error = 0.0;
  double tail_bound = 0.0;
  double statistical_error = 0.0;
  std::vector<double> s1, s2;
  std::vector<PropagatorEstimate> grid;  ///< row-major (i over s1, j over s2)
};

namespace detail {

/// Bounds on the free-kernel envelope outside [s_min, s_max] (mass factor
/// dropped below s_min, Gaussian pinch dropped above s_max).
inline double free_tail_bound(double r2, double m, double hbar, int d, double s_min, double s_max) {
  const double a = r2 / (2.0 * hbar);
  const double b = m * m / (2.0 * hbar);
  const double pref = std::pow(2.0 * std::numbers::pi * hbar, -0.5 * d);
  // For S < s_min: exp(-a/S) <= exp(-a/(2 s_min)) exp(-a/(2S)), and
  // int_0^inf S^{-d/2} exp(-a/(2S)) dS = Gamma(d/2-1) (a/2)^{1-d/2}.
  const double lower = pref * std::exp(-a / (2.0 * s_min)) * std::tgamma(0.5 * d - 1.0) *
                       std::pow(0.5 * a, 1.0 - 0.5 * d);
  const double upper = pref * std::pow(s_max, -0.5 * d) * std::exp(-b * s_max) / b;
  return lower + upper;
}

inline double trapezoid_2d(const std::vector<double>& w1, const std::vector<double>& w2,
                           const std::vector<double>& f, std::size_t row_length,
                           std::size_t stride = 1) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w1.size(); ++i)
    for (std::size_t j = 0; j < w2.size(); ++j)
      acc += w1[i] * w2[j] * f[(i * stride) * row_length + j * stride];
  return acc;
}

}  // namespace detail

/// Double proper-time integral of K(S1, S2) by log-variable trapezoid
/// quadrature. The error budget combines the fine/coarse grid difference,
/// analytic tail bounds and the Monte Carlo standard errors.
template <std::size_t D>
ProperTimeResult proper_time_integral(const Endpoints<D>& p1, const Endpoints<D>& p2,
                                      const ModelParams& params, const ProperTimeGrid& ptg,
                                      const KernelEstimatorConfig& cfg) {
  static_assert(D >= 3, "proper-time tail bounds need d >= 3");
  params.validate();
  ptg.validate();
  if (params.mode != Mode::Euclidean) throw DomainError("proper_time_integral: Euclidean mode only");
  if (!(params.m1 > 0.0) || !(params.m2 > 0.0))
    throw DomainError("proper_time_integral: requires m1, m2 > 0 (infrared divergence at m = 0)");
  const Vec<D> d1 = p1.x_out - p1.x_in, d2 = p2.x_out - p2.x_in;
  const double r1sq = euclidean_dot(d1, d1), r2sq = euclidean_dot(d2, d2);
  if (!(r1sq > 0.0) || !(r2sq > 0.0))
    throw DomainError("proper_time_integral: coincident endpoints give a divergent integral");

  ProperTimeResult res;
  res.s1 = ptg.axis1();
  res.s2 = ptg.axis2();
  const std::size_t n1 = res.s1.size(), n2 = res.s2.size();
  res.grid.resize(n1 * n2);
  std::vector<double> values(n1 * n2), errors(n1 * n2);
  double max_ratio = 1.0;
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      KernelEstimatorConfig point = cfg;
      point.sampling.tag_a = i + 1;
      point.sampling.tag_b = j + 1;
      const auto est = estimate_kernel(p1, p2, res.s1[i], res.s2[j], params, point);
      res.grid[i * n2 + j] = est;
      values[i * n2 + j] = est.value;
      errors[i * n2 + j] = est.ratio_stderr * est.free_reference;
      max_ratio = std::max(max_ratio, est.ratio_mean + 3.0 * est.ratio_stderr);
    }

  const auto w1 = log_trapezoid_weights(res.s1);
  const auto w2 = log_trapezoid_weights(res.s2);
  res.value = detail::trapezoid_2d(w1, w2, values, n2);

  // Coarse grid: every other point (odd counts keep both ends).
  if (n1 % 2 == 1 && n2 % 2 == 1) {
    std::vector<double> c1, c2;
    for (std::size_t i = 0; i < n1; i += 2) c1.push_back(res.s1[i]);
    for (std::size_t j = 0; j < n2; j += 2) c2.push_back(res.s2[j]);
    const double coarse =
        detail::trapezoid_2d(log_trapezoid_weights(c1), log_trapezoid_weights(c2), values, n2, 2);
    res.quadrature_error = std::abs(res.value - coarse);
  }

  double stat2 = 0.0;
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      const double e = w1[i] * w2[j] * errors[i * n2 + j];
      stat2 += e * e;
    }
  res.statistical_error = std::sqrt(stat2);

  const int d = static_cast<int>(D);
  const double t1 = detail::free_tail_bound(r1sq, params.m1, params.hbar, d, ptg.s_min, ptg.s_max);
  const double t2 = detail::free_tail_bound(r2sq, params.m2, params.hbar, d, ptg.s_min, ptg.s_max);
  const double a1 = free_proper_time_integral(std::sqrt(r1sq), params.m1, params.hbar, d);
  const double a2 = free_proper_time_integral(std::sqrt(r2sq), params.m2, params.hbar, d);
  res.tail_bound = max_ratio * (a1 * t2 + t1 * a2 + t1 * t2);

  res.error = res.quadrature_error + res.tail_bound + res.statistical_error;
  return res;
}

}  // namespace fokker
