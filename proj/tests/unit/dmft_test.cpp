#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "qlmf/dmft/fixed_point.hpp"
#include "qlmf/dmft/profile.hpp"
#include "qlmf/dmft/quadrature.hpp"
#include "qlmf/dmft/stability.hpp"
#include "qlmf/experiments/io.hpp"

using namespace qlmf;

namespace {

SolverParams params(int p, double gamma, double t) {
  SolverParams sp;
  sp.p = p;
  sp.gamma = gamma;
  sp.t = t;
  return sp;
}

}  // namespace

// ---------------------------------------------------------------------------
// Quadrature.

TEST(Quadrature, GaussHermiteMoments) {
  for (int n : {40, 100, 200, 400}) {
    const QuadRule& r = gauss_hermite_normal(n);
    EXPECT_NEAR(r.apply([](double) { return 1.0; }), 1.0, 1e-14);
    EXPECT_NEAR(r.apply([](double z) { return z; }), 0.0, 1e-14);
    EXPECT_NEAR(r.apply([](double z) { return z * z; }), 1.0, 1e-13);
    EXPECT_NEAR(r.apply([](double z) { return z * z * z * z; }), 3.0, 1e-12);
  }
}

TEST(Quadrature, GaussianMomentGeneratingFunction) {
  const double b = 1.3;
  EXPECT_NEAR(gauss_expect([&](double z) { return std::exp(b * z); }), std::exp(b * b / 2), 1e-10);
}

TEST(Quadrature, GaussLegendreIntegratesPolynomials) {
  const QuadRule& r = gauss_legendre(12);
  EXPECT_NEAR(r.apply([](double x) { return std::pow(x, 22) + 1.0; }), 2.0 / 23.0 + 2.0, 1e-14);
}

TEST(Quadrature, TruncatedExpectationsMatchClosedForms) {
  for (double zc : {-2.0, -0.3, 0.5, 2.4, 5.0, 11.0}) {
    EXPECT_NEAR(gauss_expect([](double) { return 1.0; }, 200, zc), normal_cdf(zc), 1e-13) << zc;
    EXPECT_NEAR(gauss_expect([](double z) { return z; }, 200, zc), -normal_pdf(zc), 1e-13) << zc;
    const double b = 0.8;
    EXPECT_NEAR(gauss_expect([&](double z) { return std::exp(b * z); }, 200, zc),
                std::exp(b * b / 2) * normal_cdf(zc - b), 1e-12)
        << zc;
  }
}

TEST(Quadrature, LogGradedRuleResolvesTheEdge) {
  // ∫_{z < zc − gap} Dz / (zc − z) diverges like φ(zc) ln(1/gap); compare two gaps.
  const double zc = 1.0;
  auto f = [&](double z) { return 1.0 / (zc - z); };
  double i1 = log_graded_rule(zc, 1e-6, 200).apply(f);
  double i2 = log_graded_rule(zc, 1e-9, 200).apply(f);
  EXPECT_NEAR(i2 - i1, normal_pdf(zc) * std::log(1e3), 1e-6);
}

// ---------------------------------------------------------------------------
// Profile x(z).

TEST(Profile, ImplicitEquationResidualForNegativeA) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uk(0.2, 3.0), ua(-2.0, -0.01), ub(0.05, 2.0), uz(-6.0, 6.0);
  for (int trial = 0; trial < 20; ++trial) {
    ProfileParams pp{uk(rng), ua(rng), ub(rng)};
    for (int j = 0; j < 100; ++j) {
      double z = uz(rng);
      double x = x_of_z(pp, z).x;
      double rhs = pp.k * std::exp(pp.b * z + pp.a * x);
      EXPECT_LT(std::abs(x - rhs), 1e-12 * std::max(1.0, x));
    }
  }
}

TEST(Profile, ImplicitEquationResidualForPositiveA) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uk(0.2, 3.0), ua(0.01, 1.0), ub(0.05, 2.0), uf(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    ProfileParams pp{uk(rng), ua(rng), ub(rng)};
    double zc = pp.z_crit();
    for (int j = 0; j < 100; ++j) {
      double z = zc - 8.0 * uf(rng);
      ProfilePoint pt = x_of_z(pp, z);
      EXPECT_LT(std::abs(pt.x - pp.k * std::exp(pp.b * z + pp.a * pt.x)), 1e-12 * std::max(1.0, pt.x));
      EXPECT_LE(pp.a * pt.x, 1.0 + 1e-15);
      EXPECT_NEAR(pt.one_minus_ax, 1.0 - pp.a * pt.x, 1e-12);
    }
    EXPECT_EQ(x_of_z(pp, zc + 0.1).x, 0.0);
  }
}

TEST(Profile, IncreasingInZ) {
  for (ProfileParams pp : {ProfileParams{0.9, 0.06, 0.36}, ProfileParams{1.2, -0.3, 0.5}, ProfileParams{1.0, 0.0, 0.7}}) {
    double zc = pp.z_crit();
    double prev = -1.0;
    for (double z = -8.0; z < std::min(zc, 8.0); z += 0.01) {
      double x = x_of_z(pp, z).x;
      EXPECT_GT(x, prev);
      prev = x;
    }
  }
}

TEST(Profile, MatchesLambertOracle) {
  EXPECT_NEAR(x_of_z({0.9, 0.06, 0.36}, 0.5).x, 1.154800391507252, 1e-13);
  EXPECT_NEAR(x_of_z({0.9, 0.06, 0.36}, 3.0).x, 3.213853539399227, 1e-13);
  EXPECT_NEAR(x_of_z({1.2, -0.3, 0.5}, 1.0).x, 1.328235060371220, 1e-13);
  EXPECT_NEAR(x_of_z({0.5, 0.4, 1.0}, -0.7).x, 0.277433572896215, 1e-13);
  EXPECT_NEAR(ProfileParams({0.5, 0.4, 1.0}).z_crit(), 0.6094379124341003, 1e-14);
}

TEST(Profile, ContinuousAtTheBranchPoint) {
  ProfileParams pp{0.9, 0.06, 0.36};
  double zc = pp.z_crit();
  ProfilePoint near = x_of_z(pp, zc - 1e-12);
  EXPECT_NEAR(near.x, 1.0 / pp.a, 1e-3);
  EXPECT_GT(near.one_minus_ax, 0.0);
  EXPECT_LT(near.one_minus_ax, 1e-5);
}

TEST(Profile, RejectsInvalidParameters) {
  EXPECT_THROW(x_of_z({0.0, 0.1, 1.0}, 0.0), NumericDomainError);
  EXPECT_THROW(x_of_z({1.0, NAN, 1.0}, 0.0), NumericDomainError);
  EXPECT_THROW(x_of_z({1.0, 0.1, 1.0}, INFINITY), NumericDomainError);
}

// ---------------------------------------------------------------------------
// Fixed points.

TEST(FixedPoint, CorrelatedTwoPlayerMatchesIndependentOracle) {
  SolverParams sp = params(2, 0.5, 3.0);
  FixedPointSolution s = solve_fixed_point(sp);
  EXPECT_NEAR(s.k, 0.874754976505, 1e-9);
  EXPECT_NEAR(s.a, 0.059770113842, 1e-9);
  EXPECT_NEAR(s.b, 0.359607082799, 1e-9);
  EXPECT_NEAR(s.q, 1.163855285990, 1e-9);
  EXPECT_NEAR(s.extinction, 2.889053e-08, 1e-12);
  EXPECT_EQ(s.regime, Regime::Boundary);
  for (double l : s.losses) EXPECT_LT(std::abs(l), 1e-12);
  EXPECT_LT(s.residual, 1e-12);
}

TEST(FixedPoint, CompetitiveSignContract) {
  SolverParams sp = params(2, -0.2, 2.0);
  FixedPointSolution s = solve_fixed_point(sp);
  EXPECT_LT(s.a, 0.0);
  EXPECT_EQ(s.phi, 1.0);
  EXPECT_EQ(s.regime, Regime::Interior);
  EXPECT_EQ(extinction_rate(s), 0.0);
  EXPECT_LT(s.residual, 1e-12);
  EXPECT_NEAR(s.k, 0.901510426652, 1e-9);
  EXPECT_NEAR(s.a, -0.047084660665, 1e-9);
  EXPECT_NEAR(s.b, 0.578566628488, 1e-9);
}

TEST(FixedPoint, ThreePlayerMatchesIndependentOracle) {
  FixedPointSolution s = solve_fixed_point(params(3, 1.0, 4.0));
  EXPECT_NEAR(s.k, 0.888238334466, 1e-9);
  EXPECT_NEAR(s.a, 0.074475343820, 1e-9);
  EXPECT_NEAR(s.b, 0.273421703278, 1e-9);
  EXPECT_NEAR(s.q, 1.093686813111, 1e-9);
  EXPECT_NEAR(s.chi, s.a * s.t / (s.gamma * s.q), 1e-15);
}

TEST(FixedPoint, QuadratureDoublingChangesQBelowTolerance) {
  for (auto [p, gamma, t] : {std::tuple{2, 0.5, 3.0}, std::tuple{3, -0.5, 2.0}, std::tuple{5, 3.2, 6.0}}) {
    SolverParams sp = params(p, gamma, t);
    FixedPointSolution a = solve_fixed_point(sp);
    sp.quad_nodes = 400;
    FixedPointSolution b = solve_fixed_point(sp, &a);
    EXPECT_NEAR(a.q, b.q, 1e-8) << "p=" << p << " gamma=" << gamma;
  }
}

TEST(FixedPoint, ContinuationStepsAreSmooth) {
  SolverParams sp = params(2, 0.8, 6.0);
  std::vector<double> ts;
  for (double t = 6.0; t > 2.95; t -= 0.2) ts.push_back(t);
  auto path = continuation_path(sp, ts);
  for (std::size_t k = 1; k < path.size(); ++k) {
    EXPECT_LT(std::abs(path[k].q - path[k - 1].q), 0.2);
    EXPECT_GT(path[k].q, path[k - 1].q);
  }
}

TEST(FixedPoint, RejectsGammaZeroAndInvalidParameters) {
  EXPECT_THROW(solve_fixed_point(params(2, 0.0, 2.0)), ParameterError);
  EXPECT_THROW(solve_fixed_point(params(1, 0.5, 2.0)), ParameterError);
  EXPECT_THROW(solve_fixed_point(params(2, 0.5, -1.0)), ParameterError);
}

TEST(FixedPoint, LimitFromNegativeCorrelationMatchesUncorrelatedSolution) {
  SolverParams sp = params(2, 0.0, 2.2);
  FixedPointSolution g0 = gamma_zero_solve(sp, MomentClosure::Exact);
  SolverParams near = params(2, -1e-10, 2.2);
  double a = near.gamma * std::pow(g0.q, near.p - 2) / (near.t * near.t);
  LossValues l = losses(g0.k, a, g0.b, near);
  for (double v : l.l) EXPECT_LT(std::abs(v), 1e-8);
}

TEST(GammaZero, InteriorMomentIdentities) {
  FixedPointSolution s = gamma_zero_solve(params(2, 0.0, 2.2), MomentClosure::Exact);
  ASSERT_EQ(s.regime, Regime::Interior);
  double m1 = gauss_expect([&](double z) { return s.k * std::exp(s.b * z); });
  double m2 = gauss_expect([&](double z) { return std::pow(s.k * std::exp(s.b * z), 2); });
  EXPECT_NEAR(m1, s.k * std::exp(s.b * s.b / 2), 1e-10);
  EXPECT_NEAR(m2, s.k * s.k * std::exp(2 * s.b * s.b), 1e-10);
  EXPECT_NEAR(m1, 1.0, 1e-10);
  EXPECT_NEAR(m2, s.q, 1e-10);
}

TEST(GammaZero, LinearClosureMatchesTangencyOracle) {
  FixedPointSolution a = gamma_zero_solve(params(2, 0.0, 1.8));
  EXPECT_EQ(a.regime, Regime::Boundary);
  EXPECT_NEAR(a.z_crit, 2.437112247, 1e-7);
  EXPECT_NEAR(extinction_rate(a), 0.007402541, 1e-8);
  EXPECT_NEAR(a.q, 3.099990550, 1e-6);
  FixedPointSolution b = gamma_zero_solve(params(2, 0.0, 1.79));
  EXPECT_NEAR(b.z_crit, 2.407622018, 1e-7);
  EXPECT_NEAR(extinction_rate(b), 0.008028398, 1e-8);
  FixedPointSolution c = gamma_zero_solve(params(2, 0.0, 2.2));
  EXPECT_EQ(c.regime, Regime::Interior);
  EXPECT_NEAR(c.q, 1.686571531134, 1e-10);
}

TEST(GammaZero, Thresholds) {
  EXPECT_NEAR(gamma_zero_threshold(2), 2.019, 1e-3);
  EXPECT_NEAR(gamma_zero_threshold(3), 2.855, 1e-3);
  EXPECT_NEAR(gamma_zero_threshold(5), 4.038, 1e-3);
  EXPECT_NEAR(gamma_zero_threshold(2, MomentClosure::Exact), std::sqrt(std::numbers::e), 1e-15);
  const double t0 = gamma_zero_threshold(2);
  EXPECT_EQ(gamma_zero_solve(params(2, 0.0, t0 + 1e-3)).regime, Regime::Interior);
  EXPECT_EQ(gamma_zero_solve(params(2, 0.0, t0 - 1e-3)).regime, Regime::Boundary);
}

TEST(GammaZero, ExtinctionDecreasesWithTemperature) {
  double prev = 1.0;
  for (double t = 1.2; t < 2.0; t += 0.1) {
    double e = extinction_rate(gamma_zero_solve(params(2, 0.0, t)));
    EXPECT_LT(e, prev);
    prev = e;
  }
}

// ---------------------------------------------------------------------------
// Stability.

TEST(Stability, ReferenceLaw) {
  EXPECT_NEAR(tcrit_large_p(0.0, 2), 1.6487, 1e-4);
  EXPECT_NEAR(tcrit_large_p(1.0, 2), 3.2974, 1e-4);
  EXPECT_NEAR(tcrit_large_p(0.5, 3), 3.4974, 1e-4);
  EXPECT_NEAR(tcrit_large_p(0.5, 2), 2.4731, 1e-4);
}

TEST(Stability, StableAboveAndUnstableBelow) {
  SolverParams sp = params(2, 0.5, 3.0);
  StabilityReport r = stability_check(solve_fixed_point(sp), sp);
  EXPECT_TRUE(r.stable);
  EXPECT_NEAR(r.rhs, 1.0, 1e-15);
  EXPECT_NEAR(r.lhs, 0.154, 1e-3);

  SolverParams low = params(2, 0.5, 1.0);
  bool unstable_or_failed = true;
  try {
    FixedPointSolution s = solve_fixed_point(low);
    unstable_or_failed = !stability_check(s, low).stable;
  } catch (const SolverError&) {
  }
  EXPECT_TRUE(unstable_or_failed);
}

TEST(Stability, CompetitiveLimitDropsTheSurvivingFraction) {
  for (auto [p, gamma, t] : {std::tuple{2, -0.5, 1.0}, std::tuple{3, -0.8, 2.0}, std::tuple{5, -1.0, 3.0}}) {
    SolverParams sp = params(p, gamma, t);
    FixedPointSolution s = solve_fixed_point(sp);
    StabilityReport r = stability_check(s, sp);
    EXPECT_EQ(s.phi, 1.0);
    EXPECT_LT(std::abs(r.lhs - r.lhs_conditional), 1e-10 * r.lhs);
  }
}

TEST(Stability, CriticalTemperatureFrozenValues) {
  EXPECT_NEAR(critical_temperature(0.2, 2), 2.0992, 3e-3);
  EXPECT_NEAR(critical_temperature(0.5, 2), 2.4785, 3e-3);
  EXPECT_NEAR(critical_temperature(0.8, 2), 2.7628, 3e-3);
  EXPECT_NEAR(critical_temperature(-0.5, 2), 0.5837, 3e-3);
  EXPECT_NEAR(critical_temperature(0.0, 2), std::sqrt(std::numbers::e), 2e-3);
  EXPECT_NEAR(critical_temperature(1.0, 3), 3.3428, 3e-3);
}

TEST(Stability, CriticalTemperatureIncreasesWithCorrelation) {
  double prev = 0.0;
  for (double gh : {-0.5, 0.0, 0.2, 0.5, 0.8, 1.0}) {
    double t = critical_temperature(gh, 2);
    EXPECT_GT(t, prev) << gh;
    prev = t;
  }
}

TEST(Stability, ExtinctionNearTheBoundaryIsRareButPresent) {
  for (int p : {2, 3, 5}) {
    for (double gh : {0.5, 0.8}) {
      double tc = critical_temperature(gh * (p - 1), p);
      double e = extinction_rate(solve_fixed_point(params(p, gh * (p - 1), tc + 0.005)));
      EXPECT_GE(e, 1e-4) << "p=" << p << " gh=" << gh;
      EXPECT_LE(e, 1e-2) << "p=" << p << " gh=" << gh;
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization.

TEST(Serialization, JsonRoundTrip) {
  FixedPointSolution s = solve_fixed_point(params(2, 0.5, 3.0));
  FixedPointSolution r = dmft_from_json(nlohmann::json::parse(dmft_json(s).dump()));
  EXPECT_EQ(r.k, s.k);
  EXPECT_EQ(r.a, s.a);
  EXPECT_EQ(r.b, s.b);
  EXPECT_EQ(r.q, s.q);
  EXPECT_EQ(r.chi, s.chi);
  EXPECT_EQ(r.z_crit, s.z_crit);
  EXPECT_EQ(r.regime, s.regime);

  FixedPointSolution g = gamma_zero_solve(params(2, 0.0, 2.2));
  nlohmann::json j = dmft_json(g);
  EXPECT_TRUE(j["chi"].is_null());
  EXPECT_TRUE(j["z_crit"].is_null());
  FixedPointSolution gr = dmft_from_json(j);
  EXPECT_TRUE(std::isnan(gr.chi));
  EXPECT_TRUE(std::isinf(gr.z_crit));
  EXPECT_THROW(dmft_from_json(nlohmann::json{{"schema", "other"}}), IoError);
}

TEST(Serialization, CsvRecordHasFixedColumns) {
  FixedPointSolution s = solve_fixed_point(params(2, 0.5, 3.0));
  std::string rec = dmft_csv_record(s);
  EXPECT_EQ(std::count(rec.begin(), rec.end(), ','), long(dmft_csv_columns().size() - 1));
  EXPECT_EQ(rec.rfind("dmft-v1,2,0.5,3,", 0), 0u);
  EXPECT_EQ(fmt_double(0.1), "0.10000000000000001");
}
