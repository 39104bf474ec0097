#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fokker/propagator.hpp"
#include "oracles.hpp"

using namespace fokker;

namespace {

ModelParams euclid(double coupling, double eps = 0.5) {
  ModelParams p;
  p.mode = Mode::Euclidean;
  p.coupling = coupling;
  p.delta_width = eps;
  return p;
}

KernelEstimatorConfig estimator(std::size_t n1, std::size_t n2, std::size_t samples, std::uint64_t seed = 7,
                                std::size_t workers = 1) {
  KernelEstimatorConfig c;
  c.n1 = n1;
  c.n2 = n2;
  c.sampling.n_samples = samples;
  c.sampling.seed = seed;
  c.sampling.workers = workers;
  return c;
}

// Two parallel time-like segments separated by 0.3 along x.
const Endpoints<4> kLine1{Vec4{0, 0, 0, 0}, Vec4{1, 0, 0, 0}};
const Endpoints<4> kLine2{Vec4{0, 0.3, 0, 0}, Vec4{1, 0.3, 0, 0}};

}  // namespace

TEST(SampleBridge, NodeVarianceAndMean) {
  const GridSpec g(8, 1.0);
  const Vec4 a{0, 0, 0, 0}, b{1, -2, 0.5, 3};
  Rng rng(11);
  const std::size_t n = 100000;
  std::vector<Accumulator> acc(9 * 4);
  for (std::size_t s = 0; s < n; ++s) {
    const auto wl = sample_bridge(a, b, g, 1.0, rng);
    for (std::size_t i = 0; i <= 8; ++i)
      for (std::size_t k = 0; k < 4; ++k) acc[i * 4 + k].add(wl.node(i)[k]);
  }
  for (std::size_t i = 1; i < 8; ++i) {
    const double t = i / 8.0;
    const double var = t * (1.0 - t);  // S t (1 - t) hbar
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& x = acc[i * 4 + k];
      // 56 simultaneous comparisons: 4 sigma keeps the family-wise false alarm rate small.
      EXPECT_NEAR(x.mean, a[k] + t * (b[k] - a[k]), 4.0 * std::sqrt(var / n));
      EXPECT_NEAR(x.variance(), var, 4.0 * var * std::sqrt(2.0 / n));
    }
  }
  EXPECT_NEAR(acc[4 * 4 + 1].variance(), 0.25, 3.0 * 0.25 * std::sqrt(2.0 / n));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(acc[k].variance(), 0.0);
    EXPECT_EQ(acc[8 * 4 + k].variance(), 0.0);
  }
}

TEST(SampleBridge, VarianceScalesWithHbar) {
  const GridSpec g(2, 2.0);
  Rng rng(12);
  Accumulator acc;
  for (int s = 0; s < 100000; ++s) acc.add(sample_bridge(Vec<1>{0}, Vec<1>{0}, g, 0.5, rng).node(1)[0]);
  const double var = 0.5 * 2.0 / 4.0;
  EXPECT_NEAR(acc.variance(), var, 3.0 * var * std::sqrt(2.0 / 1e5));
}

TEST(SampleBridge, SingleIntervalHasNoInteriorNodes) {
  Rng rng(13);
  const auto wl = sample_bridge(Vec4{}, Vec4{}, GridSpec(1, 1.0), 1.0, rng);
  ASSERT_EQ(wl.nodes().size(), 2u);
  EXPECT_EQ(wl.front(), Vec4{});
  EXPECT_EQ(wl.back(), Vec4{});
}

TEST(FreeKernelAnalytic, CoincidentMasslessUnitTime) {
  EXPECT_NEAR(free_kernel_analytic(Vec4{}, Vec4{}, 1.0, 0.0, 1.0), 0.02533029591, 1e-11);
  EXPECT_NEAR(free_kernel_analytic(Vec4{}, Vec4{}, 1.0, 0.0, 1.0), std::pow(2.0 * std::numbers::pi, -2), 1e-16);
}

TEST(FreeKernelAnalytic, FactorizesOverComponents) {
  const double c = 0.7, S = 1.3;
  const double k4 = free_kernel_analytic(Vec4{}, Vec4{c, c, c, c}, S, 0.0, 1.0);
  const double k1 = free_kernel_analytic(Vec<1>{0}, Vec<1>{c}, S, 0.0, 1.0);
  EXPECT_NEAR(k4, std::pow(k1, 4), 1e-15);
  EXPECT_NEAR(free_kernel_analytic(4 * c * c, S, 0.8, 1.0, 4), oracle::heat_kernel(4 * c * c, S, 0.8, 1.0, 4), 1e-15);
}

TEST(FreeKernelAnalytic, RejectsNonPositiveTime) {
  EXPECT_THROW(free_kernel_analytic(0.0, 0.0, 1.0, 1.0, 4), DomainError);
  EXPECT_THROW(free_kernel_analytic(0.0, -1.0, 1.0, 1.0, 4), DomainError);
}

TEST(FreeKernelAnalytic, LatticeBruteForceThreeSteps) {
  // d = 1, n = 3: integrate the discretized free weight over the two interior nodes.
  const double S = 1.2, m = 0.6, hbar = 0.9, xa = -0.4, xb = 0.5;
  const double ds = S / 3.0;
  auto step = [&](double u, double v) {
    return std::exp(-(v - u) * (v - u) / (2.0 * hbar * ds)) / std::sqrt(2.0 * std::numbers::pi * hbar * ds);
  };
  const double w = 8.0 * std::sqrt(hbar * S);
  const double lattice =
      oracle::integrate_2d([&](double x1, double x2) { return step(xa, x1) * step(x1, x2) * step(x2, xb); },
                           xa - w, xa + w, xb - w, xb + w) *
      std::exp(-0.5 * m * m * S / hbar);
  const double analytic = free_kernel_analytic(Vec<1>{xa}, Vec<1>{xb}, S, m, hbar);
  EXPECT_NEAR(lattice / analytic, 1.0, 1e-6);
}

TEST(EstimateKernel, ZeroCouplingIsExactProduct) {
  const auto p = euclid(0.0);
  const auto est = estimate_kernel(kLine1, kLine2, 1.0, 1.5, p, estimator(4, 4, 100));
  EXPECT_EQ(est.ratio_mean, 1.0);
  EXPECT_EQ(est.ratio_stderr, 0.0);
  EXPECT_EQ(est.value, free_kernel_analytic(kLine1.x_in, kLine1.x_out, 1.0, 1.0, 1.0) *
                           free_kernel_analytic(kLine2.x_in, kLine2.x_out, 1.5, 1.0, 1.0));
}

TEST(EstimateKernel, Preconditions) {
  auto p = euclid(0.1);
  EXPECT_THROW(estimate_kernel(kLine1, kLine2, 0.0, 1.0, p, estimator(4, 4, 10)), DomainError);
  EXPECT_THROW(estimate_kernel(kLine1, kLine2, 1.0, 1.0, p, estimator(4, 4, 0)), DomainError);
  p.mode = Mode::Minkowski;
  EXPECT_THROW(estimate_kernel(kLine1, kLine2, 1.0, 1.0, p, estimator(4, 4, 10)), DomainError);
}

TEST(EstimateKernel, SkipLimit) {
  EXPECT_NO_THROW(detail::check_skips(1, 100, 0.01, "t"));
  EXPECT_THROW(detail::check_skips(2, 100, 0.01, "t"), SingularOperator);
}

TEST(EstimateKernel, WeakCouplingIsLinear) {
  const auto cfg = estimator(4, 4, 4000, 21);
  auto slope = [&](double lam) {
    const auto e = estimate_kernel(kLine1, kLine2, 1.0, 1.0, euclid(lam), cfg);
    return std::pair{(e.ratio_mean - 1.0) / lam, e.ratio_stderr / lam};
  };
  const auto [s1, e1] = slope(1e-2);
  const auto [s2, e2] = slope(5e-3);
  EXPECT_LT(std::abs(s1 - s2), 3.0 * std::hypot(e1, e2));

  // First-order estimator on the same streams: log det A has no linear term,
  // so dR/dlambda at 0 is the mean of -I_int(lambda = 1)/hbar.
  const GridSpec g1(4, 1.0), g2(4, 1.0);
  const Accumulator first = run_sampling(cfg.sampling, [&](Rng& rng) -> std::optional<double> {
    const auto b1 = sample_bridge(kLine1.x_in, kLine1.x_out, g1, 1.0, rng, 1);
    const auto b2 = sample_bridge(kLine2.x_in, kLine2.x_out, g2, 1.0, rng, 2);
    const auto v1 = finite_difference_velocity(b1), v2 = finite_difference_velocity(b2);
    const auto m1 = midpoint_positions(b1), m2 = midpoint_positions(b2);
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const Vec4 d = m1[i] - m2[j];
        acc += oracle::gaussian_delta(-euclidean_dot(d, d), 0.5) * euclidean_dot(v1[i], v2[j]);
      }
    return -0.25 * 0.25 * acc;
  });
  EXPECT_LT(std::abs(s2 - first.mean), 3.0 * std::hypot(e2, first.stderr_of_mean()));
  EXPECT_LT(std::abs(s1 - first.mean), 3.0 * std::hypot(e1, first.stderr_of_mean()));
}

TEST(EstimateKernel, OneNodeMatchesQuadrature) {
  // D = 1, two steps per particle: one free interior node each.
  const double lam = 0.8, eps = 0.5, S1 = 1.0, S2 = 0.8;
  const double a1 = 0.0, b1 = 1.0, a2 = 0.2, b2 = 1.1;
  const auto p = euclid(lam, eps);
  const Endpoints<1> e1{Vec<1>{a1}, Vec<1>{b1}}, e2{Vec<1>{a2}, Vec<1>{b2}};
  const auto est = estimate_kernel(e1, e2, S1, S2, p, estimator(2, 2, 100000, 5));

  const double ds1 = S1 / 2, ds2 = S2 / 2;
  auto weight = [&](double x, double y) {
    const double n1[3] = {a1, x, b1}, n2[3] = {a2, y, b2};
    double K[2][2], v1[2], v2[2];
    for (int i = 0; i < 2; ++i) {
      v1[i] = (n1[i + 1] - n1[i]) / ds1;
      v2[i] = (n2[i + 1] - n2[i]) / ds2;
    }
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double d = 0.5 * (n1[i] + n1[i + 1]) - 0.5 * (n2[j] + n2[j + 1]);
        K[i][j] = oracle::gaussian_delta(-d * d, eps);
      }
    double i_int = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) i_int += lam * ds1 * ds2 * K[i][j] * v1[i] * v2[j];
    // det [[I, lam ds2 K], [lam ds1 K^T, I]] = det(I - lam^2 ds1 ds2 K K^T)
    const double c = lam * lam * ds1 * ds2;
    const double kk00 = K[0][0] * K[0][0] + K[0][1] * K[0][1];
    const double kk11 = K[1][0] * K[1][0] + K[1][1] * K[1][1];
    const double kk01 = K[0][0] * K[1][0] + K[0][1] * K[1][1];
    const double det = (1 - c * kk00) * (1 - c * kk11) - c * c * kk01 * kk01;
    return std::sqrt(det) * std::exp(-i_int);
  };
  const double sx = std::sqrt(S1 / 4), sy = std::sqrt(S2 / 4);
  const double mx = 0.5 * (a1 + b1), my = 0.5 * (a2 + b2);
  auto gauss = [](double u, double s) { return std::exp(-u * u / (2 * s * s)) / (s * std::sqrt(2 * std::numbers::pi)); };
  const double exact = oracle::integrate_2d(
      [&](double x, double y) { return gauss(x - mx, sx) * gauss(y - my, sy) * weight(x, y); }, mx - 9 * sx,
      mx + 9 * sx, my - 9 * sy, my + 9 * sy);
  EXPECT_GT(std::abs(exact - 1.0), 10.0 * est.ratio_stderr) << "coupling too weak for a meaningful check";
  EXPECT_NEAR(est.ratio_mean, exact, 3.0 * est.ratio_stderr);
}

TEST(EstimateKernel, CouplingParityUnderReversal) {
  const auto cfg = estimator(4, 4, 6000, 33);
  const Endpoints<4> rev2{kLine2.x_out, kLine2.x_in};
  for (double lam : {0.05, -0.05}) {
    const auto a = estimate_kernel(kLine1, kLine2, 1.0, 1.0, euclid(lam), cfg);
    auto c2 = cfg;
    c2.sampling.seed = 34;
    const auto b = estimate_kernel(kLine1, rev2, 1.0, 1.0, euclid(-lam), c2);
    EXPECT_LT(std::abs(a.ratio_mean - b.ratio_mean), 3.0 * std::hypot(a.ratio_stderr, b.ratio_stderr));
    EXPECT_EQ(a.free_reference, b.free_reference);
  }
}

TEST(EstimateKernel, StderrScalesAsInverseRootN) {
  const auto p = euclid(0.2);
  const auto small = estimate_kernel(kLine1, kLine2, 1.0, 1.0, p, estimator(4, 4, 1000, 41));
  const auto large = estimate_kernel(kLine1, kLine2, 1.0, 1.0, p, estimator(4, 4, 16000, 42));
  EXPECT_NEAR(small.ratio_stderr / large.ratio_stderr, 4.0, 0.8);
}

TEST(EstimateKernel, BitReproducible) {
  const auto p = euclid(0.1);
  for (std::size_t workers : {1u, 3u}) {
    const auto a = estimate_kernel(kLine1, kLine2, 1.0, 1.0, p, estimator(4, 4, 600, 9, workers));
    const auto b = estimate_kernel(kLine1, kLine2, 1.0, 1.0, p, estimator(4, 4, 600, 9, workers));
    EXPECT_EQ(a.ratio_mean, b.ratio_mean);
    EXPECT_EQ(a.ratio_stderr, b.ratio_stderr);
    EXPECT_EQ(a.n_samples, 600u);
  }
}

TEST(Accumulator, MergeMatchesSinglePass) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(2.0, 3.0);
  Accumulator all, a, b;
  for (int i = 0; i < 1000; ++i) {
    const double x = g(rng);
    all.add(x);
    (i < 370 ? a : b).add(x);
  }
  a.merge(b);
  EXPECT_NEAR(a.mean, all.mean, 1e-13);
  EXPECT_NEAR(a.variance(), all.variance(), 1e-11);
  EXPECT_EQ(a.count, all.count);
}

TEST(PhaseSpaceReduction, FreeSingleNodeScalar) {
  const Worldline<1> w1(GridSpec(1, 1.0), {Vec<1>{0}, Vec<1>{0.7}}, 1);
  const Worldline<1> w2(GridSpec(1, 1.0), {Vec<1>{0}, Vec<1>{-0.3}}, 2);
  const auto rep = verify_phase_space_reduction(w1, w2, euclid(0.0));
  EXPECT_EQ(rep.dimension, 2u);
  EXPECT_LT(rep.rel_formula_vs_quadrature, 1e-12);
  EXPECT_LT(rep.rel_formula_vs_configuration, 1e-12);
  // Each slot: int dp exp(i p v - p^2/2) = sqrt(2 pi) exp(-v^2/2), times exp(-m^2/2).
  const double want = 2.0 * std::numbers::pi * std::exp(-0.5 * (0.49 + 0.09) - 1.0);
  EXPECT_NEAR(rep.gaussian_formula / want, 1.0, 1e-12);
}

TEST(PhaseSpaceReduction, CoupledRandomConfigurations) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 0.4);
  auto line = [&](std::size_t n, double S, int idx) {
    std::vector<Vec<2>> nodes(n + 1);
    for (std::size_t i = 0; i <= n; ++i) nodes[i] = Vec<2>{S * i / n + g(rng), g(rng)};
    return Worldline<2>(GridSpec(n, S), nodes, idx);
  };
  for (int t = 0; t < 10; ++t) {
    const auto rep = verify_phase_space_reduction(line(t % 2 + 1, 1.0, 1), line(1, 0.8, 2), euclid(0.1 + 0.05 * t));
    EXPECT_LT(rep.rel_formula_vs_quadrature, 1e-6) << t;
    EXPECT_LT(rep.rel_formula_vs_configuration, 1e-10) << t;
    EXPECT_LT(rep.rel_det_factor, 1e-10) << t;
  }
}

TEST(PhaseSpaceReduction, DimensionCap) {
  const auto w = linear_interpolant(Vec4{}, Vec4{1, 0, 0, 0}, GridSpec(2, 1.0));
  EXPECT_THROW(verify_phase_space_reduction(w, w.relabeled(2), euclid(0.1)), DomainError);
}

TEST(ProperTime, ClosedFormMatchesAdaptiveQuadrature) {
  for (double r : {0.5, 1.0, 2.0}) {
    const double oracle_value =
        oracle::integrate_half_line([&](double S) { return oracle::heat_kernel(r * r, S, 1.0, 1.0, 4); });
    EXPECT_NEAR(free_proper_time_integral(r, 1.0, 1.0, 4) / oracle_value, 1.0, 1e-8) << r;
  }
  // d = 3 reduces to exp(-m r) / (2 pi r) with this normalization of the kernel.
  EXPECT_NEAR(free_proper_time_integral(1.3, 0.7, 1.0, 3), std::exp(-0.91) / (2 * std::numbers::pi * 1.3), 1e-14);
  EXPECT_THROW(free_proper_time_integral(1.0, 0.0, 1.0, 4), DomainError);
}

TEST(ProperTime, FreeDoubleIntegral) {
  const ProperTimeGrid ptg;
  std::vector<double> values;
  for (double r : {0.5, 1.0, 2.0}) {
    const Endpoints<4> a{Vec4{}, Vec4{r, 0, 0, 0}}, b{Vec4{0, 1, 0, 0}, Vec4{r, 1, 0, 0}};
    const auto res = proper_time_integral(a, b, euclid(0.0), ptg, estimator(4, 4, 10));
    const double each =
        oracle::integrate_half_line([&](double S) { return oracle::heat_kernel(r * r, S, 1.0, 1.0, 4); });
    EXPECT_NEAR(res.value / (each * each), 1.0, 5e-3) << r;
    EXPECT_LE(std::abs(res.value - each * each), res.error) << r;
    EXPECT_LT(res.error, 5e-3 * res.value) << r;
    EXPECT_EQ(res.statistical_error, 0.0);
    values.push_back(res.value);

    ProperTimeGrid fine = ptg;
    fine.count1 = fine.count2 = 2 * ptg.count1 - 1;
    const auto ref = proper_time_integral(a, b, euclid(0.0), fine, estimator(4, 4, 10));
    EXPECT_LT(std::abs(ref.value / res.value - 1.0), 2e-3) << r;
  }
  EXPECT_GT(values[0], values[1]);
  EXPECT_GT(values[1], values[2]);
}

TEST(ProperTime, RejectsMasslessAndCoincident) {
  const Endpoints<4> a{Vec4{}, Vec4{1, 0, 0, 0}}, z{Vec4{}, Vec4{}};
  auto p = euclid(0.0);
  EXPECT_THROW(proper_time_integral(a, z, p, ProperTimeGrid{}, estimator(2, 2, 1)), DomainError);
  p.m1 = 0.0;
  EXPECT_THROW(proper_time_integral(a, a, p, ProperTimeGrid{}, estimator(2, 2, 1)), DomainError);
  ProperTimeGrid bad;
  bad.s_min = 2.0;
  bad.s_max = 1.0;
  EXPECT_THROW(proper_time_integral(a, a, euclid(0.0), bad, estimator(2, 2, 1)), DomainError);
}
