#pragma once

// Subcommand drivers behind the command-line tool. Each returns a CSV table
// and a JSON metadata document; failures surface as exceptions mapped to
// exit codes by exit_code_for().

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fokker/cli/config.hpp"
#include "fokker/fokker.hpp"

namespace fokker::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalFailure = 3, kNonConvergence = 4 };

/// A tolerance check that did not pass.
class ToleranceBreach : public Error {
 public:
  using Error::Error;
};

struct RunResult {
  int exit_code = kOk;
  std::string csv;
  nlohmann::json meta;
};

/// Shortest round-trip decimal form, so reruns compare byte for byte.
inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt(std::size_t x) { return std::to_string(x); }

/// FNV-1a of the canonical config dump.
inline std::string config_hash(const nlohmann::json& doc) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : doc.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline const char* propagate_header() {
  return "S1,S2,ratio_mean,ratio_stderr,free_reference,value,n_samples,skipped\n";
}

inline std::string propagate_row(double S1, double S2, const PropagatorEstimate& e) {
  return fmt(S1) + "," + fmt(S2) + "," + fmt(e.ratio_mean) + "," + fmt(e.ratio_stderr) + "," +
         fmt(e.free_reference) + "," + fmt(e.value) + "," + fmt(e.n_samples) + "," +
         fmt(e.skipped) + "\n";
}

inline nlohmann::json base_meta(const std::string& subcommand, const RunConfig& c) {
  nlohmann::json m;
  m["subcommand"] = subcommand;
  m["seed"] = c.seed;
  m["workers"] = c.workers;
  m["grid"] = {{"n1", c.n1}, {"n2", c.n2}, {"S1", c.S1}, {"S2", c.S2}};
  m["config"] = c.source;
  m["config_hash"] = config_hash(c.source);
  return m;
}

inline nlohmann::json to_json(const PropagatorEstimate& e) {
  return {{"ratio_mean", e.ratio_mean},         {"ratio_stderr", e.ratio_stderr},
          {"free_reference", e.free_reference}, {"value", e.value},
          {"n_samples", e.n_samples},           {"skipped", e.skipped}};
}

// ---------------------------------------------------------------------------

struct CheckRow {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool passed() const { return residual <= tolerance; }
};

namespace detail {

inline Worldline<4> jittered_line(const Endpoints<4>& e, const GridSpec& g, int particle,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.2);
  Worldline<4> base = linear_interpolant(e.x_in, e.x_out, g, particle);
  std::vector<Vec4> nodes = base.nodes();
  for (std::size_t i = 1; i + 1 < nodes.size(); ++i)
    for (auto& x : nodes[i]) x += n(rng);
  return Worldline<4>(g, std::move(nodes), particle);
}

inline CheckRow check_determinants(const RunConfig& c, std::mt19937_64& rng) {
  CheckRow r{"det_M*det_A=1", 0.0, 1e-10};
  const GridSpec g1(c.n1, c.S1), g2(c.n2, c.S2);
  for (int t = 0; t < 5; ++t) {
    const auto op = build_coupling_operator(jittered_line(c.p1, g1, 1, rng),
                                            jittered_line(c.p2, g2, 2, rng), c.params);
    const auto md = measure_determinants(op);
    r.residual = std::max(r.residual, std::abs(md.det_M * md.det_A - 1.0));
  }
  return r;
}

inline CheckRow check_legendre(const RunConfig& c, std::mt19937_64& rng) {
  CheckRow r{"legendre_duality", 0.0, 1e-10};
  const GridSpec g1(c.n1, c.S1), g2(c.n2, c.S2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 5; ++t) {
    const auto op = build_coupling_operator(jittered_line(c.p1, g1, 1, rng),
                                            jittered_line(c.p2, g2, 2, rng), c.params);
    MomentumField<4> p;
    p.first.resize(c.n1);
    p.second.resize(c.n2);
    for (auto* side : {&p.first, &p.second})
      for (auto& x : *side)
        for (auto& e : x) e = n(rng);
    const double h = hamiltonian(op, p);
    const double hl = hamiltonian_legendre(op, p);
    const double scale = std::max(1.0, std::abs(pairing(op, p, velocity_from_momentum_exact(op, p))));
    r.residual = std::max(r.residual, std::abs(h - hl) / scale);
  }
  return r;
}

inline CheckRow check_phase_space(const RunConfig& c, std::mt19937_64& rng) {
  CheckRow r{"phase_space_reduction", 0.0, 1e-6};
  ModelParams p = c.params;
  p.mode = Mode::Euclidean;
  // Two velocity slots of two components each: four momentum dimensions.
  const GridSpec g1(1, c.S1), g2(1, c.S2);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int t = 0; t < 3; ++t) {
    Vec<2> a{n(rng), n(rng)}, b{n(rng) + 0.5, n(rng)};
    const Worldline<2> w1(g1, {Vec<2>{}, a}, 1);
    const Worldline<2> w2(g2, {Vec<2>{0.0, 0.2}, b}, 2);
    const auto rep = verify_phase_space_reduction(w1, w2, p);
    r.residual = std::max({r.residual, rep.rel_formula_vs_quadrature, rep.rel_formula_vs_configuration,
                           rep.rel_det_factor});
  }
  return r;
}

/// Central difference of the interaction action in the time component of one node.
inline double interaction_time_derivative(const Worldline<4>& w1, const Worldline<4>& w2,
                                          const ModelParams& p, int which, std::size_t node) {
  const double h = 1e-5;
  auto shifted = [&](const Worldline<4>& w, double dx) {
    std::vector<Vec4> nodes = w.nodes();
    nodes[node][0] += dx;
    return Worldline<4>(w.grid(), std::move(nodes), w.particle_index());
  };
  if (which == 1)
    return (interaction_action(shifted(w1, h), w2, p) - interaction_action(shifted(w1, -h), w2, p)) /
           (2.0 * h);
  return (interaction_action(w1, shifted(w2, h), p) - interaction_action(w1, shifted(w2, -h), p)) /
         (2.0 * h);
}

inline CheckRow check_forces(const RunConfig& c, std::mt19937_64& rng) {
  CheckRow r{"force_duality", 0.0, 1e-4};
  ModelParams p = c.params;
  p.segment_points = std::max(p.segment_points, 16);
  if (p.coupling == 0.0) p.coupling = 0.5;
  const GridSpec g(3, 1.0);
  for (int t = 0; t < 4; ++t) {
    const auto w1 = jittered_line(c.p1, g, 1, rng);
    const auto w2 = jittered_line(c.p2, g, 2, rng);
    const ForceField f = compute_forces(w1, w2, p);
    std::vector<Vec3> v1, v2;
    for (const auto& v : finite_difference_velocity(w1)) v1.push_back(spatial_part(v));
    for (const auto& v : finite_difference_velocity(w2)) v2.push_back(spatial_part(v));
    for (std::size_t a = 1; a + 1 < w1.grid().n_nodes(); ++a) {
      const double fd1 = -interaction_time_derivative(w1, w2, p, 1, a) / w1.ds();
      const double fd2 = interaction_time_derivative(w1, w2, p, 2, a) / w2.ds();
      const double e1 = std::abs(f.first.work_at_node(v1, a) - fd1) / std::max(std::abs(fd1), 1e-12);
      const double e2 = std::abs(f.second.work_at_node(v2, a) - fd2) / std::max(std::abs(fd2), 1e-12);
      r.residual = std::max({r.residual, e1, e2});
    }
  }
  return r;
}

inline CheckRow check_free_limit(const RunConfig& c) {
  CheckRow r{"free_limit", 0.0, 0.0};
  ModelParams p = c.params;
  p.mode = Mode::Euclidean;
  p.coupling = 0.0;
  const auto est = estimate_kernel(c.p1, c.p2, c.S1, c.S2, p, c.estimator());
  const double product = free_kernel_analytic(c.p1.x_in, c.p1.x_out, c.S1, p.m1, p.hbar) *
                         free_kernel_analytic(c.p2.x_in, c.p2.x_out, c.S2, p.m2, p.hbar);
  r.residual = std::abs(est.value - product) + std::abs(est.ratio_mean - 1.0) + est.ratio_stderr;
  return r;
}

inline CheckRow check_free_flow(const RunConfig& c) {
  CheckRow r{"free_constraint_flow", 0.0, 1e-8};
  ModelParams p = c.params;
  p.coupling = 0.0;
  const GridSpec g1(c.n1, c.S1), g2(c.n2, c.S2);
  const auto s1 = linear_interpolant(spatial_part(c.p1.x_in), spatial_part(c.p1.x_out), g1, 1);
  const auto s2 = linear_interpolant(spatial_part(c.p2.x_in), spatial_part(c.p2.x_out), g2, 2);
  const auto sol = solve_constraints(s1, s2, p, {c.p1.x_in[0], c.P1_in}, {c.p2.x_in[0], c.P2_in});
  auto dev = [&](const ConstraintState& st, const GridSpec& g, double x0, double P) {
    double e = 0.0;
    for (std::size_t i = 0; i < st.P.size(); ++i) {
      e = std::max(e, std::abs(st.P[i] - P));
      e = std::max(e, std::abs(st.x0[i] - (x0 + std::sqrt(2.0 * P) * g.node_time(i))));
    }
    return e;
  };
  r.residual = std::max(dev(sol.first, g1, c.p1.x_in[0], c.P1_in), dev(sol.second, g2, c.p2.x_in[0], c.P2_in));
  return r;
}

inline nlohmann::json check_json(const CheckRow& r) {
  return {{"check", r.name}, {"residual", r.residual}, {"tolerance", r.tolerance}, {"passed", r.passed()}};
}

}  // namespace detail

/// Identity suites on small grids derived from the configuration.
inline RunResult run_validate(const RunConfig& c) {
  std::mt19937_64 rng(c.seed);
  std::vector<CheckRow> rows;
  rows.push_back(detail::check_determinants(c, rng));
  rows.push_back(detail::check_legendre(c, rng));
  rows.push_back(detail::check_phase_space(c, rng));
  rows.push_back(detail::check_forces(c, rng));
  rows.push_back(detail::check_free_limit(c));
  rows.push_back(detail::check_free_flow(c));

  RunResult out;
  out.meta = base_meta("validate", c);
  out.csv = "check,residual,tolerance,passed\n";
  bool all = true;
  for (const auto& r : rows) {
    out.csv += r.name + "," + fmt(r.residual) + "," + fmt(r.tolerance) + "," + (r.passed() ? "1" : "0") + "\n";
    out.meta["checks"].push_back(detail::check_json(r));
    all = all && r.passed();
  }
  out.exit_code = all ? kOk : kNumericalFailure;
  return out;
}

/// Analytic free kernels and the closed-form proper-time integral against a
/// log-trapezoid quadrature of the kernel on the configured grid.
inline RunResult run_free_oracle(const RunConfig& c) {
  RunResult out;
  out.meta = base_meta("free-oracle", c);
  out.csv = "particle,r,S,free_kernel,proper_time_closed_form,proper_time_quadrature,rel_error,passed\n";
  const double tol = 5e-3;
  bool all = true;
  const auto s = c.ptg.axis1();
  const auto w = log_trapezoid_weights(s);
  for (int k = 1; k <= 2; ++k) {
    const Endpoints<4>& e = k == 1 ? c.p1 : c.p2;
    const double m = c.params.mass(k);
    const double S = k == 1 ? c.S1 : c.S2;
    const Vec4 d = e.x_out - e.x_in;
    const double r = std::sqrt(euclidean_dot(d, d));
    const double kern = free_kernel_analytic(e.x_in, e.x_out, S, m, c.params.hbar);
    const double closed = free_proper_time_integral(r, m, c.params.hbar, 4);
    double quad = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      quad += w[i] * free_kernel_analytic(e.x_in, e.x_out, s[i], m, c.params.hbar);
    const double rel = std::abs(quad - closed) / closed;
    const bool ok = rel <= tol;
    all = all && ok;
    out.csv += std::to_string(k) + "," + fmt(r) + "," + fmt(S) + "," + fmt(kern) + "," + fmt(closed) + "," +
               fmt(quad) + "," + fmt(rel) + "," + (ok ? "1" : "0") + "\n";
    out.meta["particles"].push_back({{"particle", k},
                                     {"r", r},
                                     {"free_kernel", kern},
                                     {"proper_time_closed_form", closed},
                                     {"proper_time_quadrature", quad},
                                     {"rel_error", rel},
                                     {"tolerance", tol}});
  }
  out.exit_code = all ? kOk : kNumericalFailure;
  return out;
}

inline RunResult run_propagate(const RunConfig& c) {
  RunResult out;
  out.meta = base_meta("propagate", c);
  const auto est = estimate_kernel(c.p1, c.p2, c.S1, c.S2, c.params, c.estimator());
  out.csv = std::string(propagate_header()) + propagate_row(c.S1, c.S2, est);
  out.meta["estimate"] = to_json(est);
  if (c.proper_time_integral) {
    const auto pt = proper_time_integral(c.p1, c.p2, c.params, c.ptg, c.estimator());
    out.meta["proper_time_integral"] = {{"value", pt.value},
                                        {"error", pt.error},
                                        {"quadrature_error", pt.quadrature_error},
                                        {"tail_bound", pt.tail_bound},
                                        {"statistical_error", pt.statistical_error},
                                        {"grid_points", pt.s1.size() * pt.s2.size()}};
  }
  return out;
}

inline ModifiedBoundary modified_boundary(const Endpoints<4>& e, double P_in) {
  ModifiedBoundary b;
  b.spatial = {spatial_part(e.x_in), spatial_part(e.x_out)};
  b.x0_in = e.x_in[0];
  b.x0_out = e.x_out[0];
  b.P_in = P_in;
  return b;
}

/// Constraint solve and shooting on the straight spatial lines, then the
/// constrained Monte Carlo estimate.
inline RunResult run_modified(const RunConfig& c) {
  RunResult out;
  out.meta = base_meta("modified", c);
  const ModifiedBoundary b1 = modified_boundary(c.p1, c.P1_in);
  const ModifiedBoundary b2 = modified_boundary(c.p2, c.P2_in);
  if (!(b1.x0_out > b1.x0_in) || !(b2.x0_out > b2.x0_in))
    throw ConfigError("x1_out: time components of the out points must exceed those of the in points");

  const GridSpec g1(c.n1, b1.free_proper_time()), g2(c.n2, b2.free_proper_time());
  ShootingProblem prob{linear_interpolant(b1.spatial.x_in, b1.spatial.x_out, g1, 1),
                       linear_interpolant(b2.spatial.x_in, b2.spatial.x_out, g2, 2),
                       {b1.x0_in, b1.P_in},
                       {b2.x0_in, b2.P_in},
                       c.params};
  const JointShootResult js = shoot_both(prob, b1.x0_out, b2.x0_out);
  const auto w1 = prob.spatial1.with_total_time(js.S1);
  const auto w2 = prob.spatial2.with_total_time(js.S2);
  out.meta["classical"] = {{"S1", js.S1},
                           {"S2", js.S2},
                           {"P1_out", js.solution.first.P.back()},
                           {"P2_out", js.solution.second.P.back()},
                           {"on_shell_residual", std::max(on_shell_residual(w1, js.solution.first),
                                                          on_shell_residual(w2, js.solution.second))},
                           {"fixed_point_iterations", js.solution.iterations}};

  ModifiedEstimatorConfig mc;
  mc.n1 = c.n1;
  mc.n2 = c.n2;
  mc.sampling = c.estimator().sampling;
  mc.max_skip_fraction = c.max_skip_fraction;
  ModelParams p = c.params;
  const ModifiedEstimate est = estimate_modified_kernel(b1, b2, p, mc);
  out.csv = "S1_free,S2_free,ratio_mean,ratio_stderr,free_reference,value,n_samples,skipped\n" +
            fmt(est.S1_free) + "," + fmt(est.S2_free) + "," + fmt(est.kernel.ratio_mean) + "," +
            fmt(est.kernel.ratio_stderr) + "," + fmt(est.kernel.free_reference) + "," +
            fmt(est.kernel.value) + "," + fmt(est.kernel.n_samples) + "," + fmt(est.kernel.skipped) + "\n";
  out.meta["estimate"] = to_json(est.kernel);
  return out;
}

/// One propagate row per value of sweep_key; every row reuses the same seed.
inline RunResult run_sweep(const RunConfig& c) {
  if (c.sweep_key.empty()) throw ConfigError("sweep_key: missing required key for sweep");
  RunResult out;
  out.meta = base_meta("sweep", c);
  out.csv = c.sweep_key + "," + propagate_header();
  for (double value : c.sweep_values) {
    RunConfig point = c;
    set_scalar(point, c.sweep_key, value);
    validate(point);
    const auto est = estimate_kernel(point.p1, point.p2, point.S1, point.S2, point.params, point.estimator());
    out.csv += fmt(value) + "," + propagate_row(point.S1, point.S2, est);
    nlohmann::json row = to_json(est);
    row[c.sweep_key] = value;
    out.meta["rows"].push_back(row);
  }
  return out;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = {"validate", "free-oracle", "propagate", "modified", "sweep"};
  return s;
}

inline RunResult run(const std::string& subcommand, const RunConfig& c) {
  if (subcommand == "validate") return run_validate(c);
  if (subcommand == "free-oracle") return run_free_oracle(c);
  if (subcommand == "propagate") return run_propagate(c);
  if (subcommand == "modified") return run_modified(c);
  if (subcommand == "sweep") return run_sweep(c);
  throw ConfigError("subcommand: unknown \"" + subcommand + "\"");
}

/// Exit status for an exception escaping run().
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kConfigError;
  if (dynamic_cast<const NonConvergence*>(&e)) return kNonConvergence;
  return kNumericalFailure;
}

inline const char* failure_kind(int code) {
  switch (code) {
    case kConfigError: return "config";
    case kNonConvergence: return "non_convergence";
    default: return "numerical";
  }
}

}  // namespace fokker::cli
