// Prints one PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "qlmf/qlmf.hpp"

using namespace qlmf;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail, double seconds) {
  std::printf("%s  %-28s %s  [%.1fs]\n", ok ? "PASS" : "FAIL", name, detail.c_str(), seconds);
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void criterion(const char* name, const std::function<std::pair<bool, std::string>()>& body) {
  auto t0 = std::chrono::steady_clock::now();
  std::pair<bool, std::string> r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  report(name, r.first, r.second, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

SolverParams params(int p, double gamma, double t, int nodes = 200) {
  SolverParams sp;
  sp.p = p;
  sp.gamma = gamma;
  sp.t = t;
  sp.quad_nodes = nodes;
  return sp;
}

std::pair<bool, std::string> self_consistency() {
  int points = 0, bad = 0;
  double worst_res = 0, worst_dq = 0;
  std::string skipped;
  for (int p : {2, 3, 5}) {
    for (double gh : {-0.5, 0.2, 0.5, 0.8}) {
      const double gamma = gh * (p - 1);
      if (gamma < -1.0) {
        skipped += fmt(" (p=%d,gh=%.1f)", p, gh);
        continue;
      }
      const double tc = critical_temperature(gamma, p);
      std::vector<double> ts;
      for (double t = 6.0; t >= tc + 0.2 - 1e-9; t -= 0.2) ts.push_back(t);
      std::optional<FixedPointSolution> warm;
      for (double t : ts) {
        SolverParams sp = params(p, gamma, t);
        FixedPointSolution s = solve_fixed_point(sp, warm ? &*warm : nullptr);
        warm = s;
        SolverParams sp2 = params(p, gamma, t, 400);
        FixedPointSolution s2 = solve_fixed_point(sp2, &s);
        double dq = std::abs(s.q - s2.q);
        worst_res = std::max(worst_res, s.residual);
        worst_dq = std::max(worst_dq, dq);
        bad += !(s.residual < 1e-12 && dq < 1e-8);
        ++points;
      }
    }
  }
  return {bad == 0 && points > 0,
          fmt("%d points, max residual %.2e, max |dq| %.2e; outside the ensemble:%s", points, worst_res, worst_dq,
              skipped.c_str())};
}

std::pair<bool, std::string> extinction_reproduction() {
  FixedPointSolution s = gamma_zero_solve(params(2, 0.0, 1.8));
  double e = extinction_rate(s);
  return {std::abs(e - 0.0074) <= 0.0010, fmt("extinction %.4f%% (target 0.74 +- 0.10)", 100 * e)};
}

std::pair<bool, std::string> regime_switch() {
  Regime hi = gamma_zero_solve(params(2, 0.0, 2.2)).regime;
  Regime lo = gamma_zero_solve(params(2, 0.0, 1.79)).regime;
  double th = gamma_zero_threshold(2);
  bool ok = hi == Regime::Interior && lo == Regime::Boundary && std::abs(th - 2.019) <= 0.001;
  return {ok, fmt("T=2.2 %s, T=1.79 %s, threshold %.4f", to_string(hi), to_string(lo), th)};
}

std::pair<bool, std::string> large_p_law() {
  const int p = 50;
  const double scale = std::sqrt(49.0 * std::numbers::e);
  bool ok = true;
  std::string d;
  double r0 = 0, r1 = 0;
  for (double gh : {0.0, 0.5, 1.0}) {
    double ratio = critical_temperature(gh * (p - 1), p) / scale;
    ok &= std::abs(ratio - (1 + gh)) <= 0.1 * (1 + gh);
    d += fmt("gh=%.1f: %.4f  ", gh, ratio);
    if (gh == 0.0) r0 = ratio;
    if (gh == 1.0) r1 = ratio;
  }
  ok &= std::abs(r1 / r0 - 2.0) <= 0.2;
  return {ok, d + fmt("factor %.3f", r1 / r0)};
}

std::pair<bool, std::string> competitive_limit() {
  double worst = 0;
  bool phi_one = true;
  int n = 0;
  for (int p : {2, 3, 5}) {
    for (double gamma : {-1.0, -0.6, -0.2}) {
      double tc = 0.0;
      try {
        tc = critical_temperature(gamma, p);
      } catch (const BracketError&) {
        // Stable throughout the bracket.
      }
      for (double t : {tc + 0.2, tc + 1.0, 6.0}) {
        SolverParams sp = params(p, gamma, t);
        FixedPointSolution s = solve_fixed_point(sp);
        StabilityReport r = stability_check(s, sp);
        phi_one &= s.phi == 1.0;
        worst = std::max(worst, std::abs(r.lhs - r.lhs_conditional) / r.lhs);
        ++n;
      }
    }
  }
  return {phi_one && worst < 1e-10, fmt("%d points, phi=1: %s, max rel diff %.1e", n, phi_one ? "yes" : "no", worst)};
}

std::pair<bool, std::string> simulation_phase() {
  const int p = 2, n = 50;
  const double gh = 0.5;
  const double tc = critical_temperature(gh, p);
  auto fraction = [&](double t) {
    int unique = 0;
    for (int g = 0; g < 10; ++g) {
      PayoffTensor tensor = sample_payoffs(GameParams{p, n, gh, derive_seed(42, "game", {std::uint64_t(g)})});
      ClassifyOptions co;
      co.n_starts = 30;
      co.threads = 0;
      unique += classify_game(tensor, t, co).label == GameLabel::UniqueFixedPoint;
    }
    return unique / 10.0;
  };
  const double t_hi = tc + 1.0, t_lo = std::max(0.3, tc - 1.5);
  double f_hi = fraction(t_hi), f_lo = fraction(t_lo);
  return {f_hi >= 0.8 && f_lo <= 0.3,
          fmt("T_crit %.4f; unique %.1f at T=%.3f, %.1f at T=%.3f", tc, f_hi, t_hi, f_lo, t_lo)};
}

std::pair<bool, std::string> null_game() {
  const int n = 8;
  PayoffTensor t = PayoffTensor::zeros(2, n);
  ClassifyOptions co;
  co.n_starts = 20;
  co.start_seed = 2024;
  co.keep_finals = true;
  GameClassification g = classify_game(t, 1.0, co);
  double worst = 0;
  for (const auto& f : g.finals)
    for (double v : f.x) worst = std::max(worst, std::abs(v - 1.0 / n));
  return {g.label == GameLabel::UniqueFixedPoint && worst < 1e-6,
          fmt("%s, max |x - 1/N| %.1e", to_string(g.label), worst)};
}

std::pair<bool, std::string> discrete_continuous() {
  const int p = 2, n = 5;
  PayoffTensor t = sample_payoffs(GameParams{p, n, 0.0, 5});
  std::mt19937_64 rng(6);
  StrategyProfile x0 = sample_initial(rng, p, n);
  const double te = 1.0, horizon = 10.0;
  std::vector<StrategyProfile> ode;
  for (int k = 1; k <= 10; ++k) {
    IntegratorOptions o;
    o.t_max = horizon * k / 10;
    o.deriv_tol = 1e-300;
    o.rel_tol = 1e-11;
    o.abs_tol = 1e-13;
    o.max_step = 0.05;
    ode.push_back(integrate(x0, t, te, o).final);
  }
  std::vector<double> errs;
  for (double alpha : {4e-3, 2e-3, 1e-3}) {
    QState q = QState::from_profile(x0, alpha, alpha / te);
    const long per_sample = std::lround(horizon / 10 / q.beta);
    double e = 0;
    for (int k = 0; k < 10; ++k) {
      for (long s = 0; s < per_sample; ++s) q = discrete_step(q, t, te);
      StrategyProfile x = q.strategy();
      for (std::size_t c = 0; c < x.x.size(); ++c) e = std::max(e, std::abs(x.x[c] - ode[k].x[c]));
    }
    errs.push_back(e);
  }
  bool ok = errs[0] > errs[1] && errs[1] > errs[2] && errs[2] < 1e-2;
  return {ok, fmt("sup error %.2e, %.2e, %.2e (ratios %.2f, %.2f)", errs[0], errs[1], errs[2], errs[0] / errs[1],
                  errs[1] / errs[2])};
}

std::pair<bool, std::string> property_suites() {
  std::mt19937_64 rng(99);
  int checks = 0;
  bool ok = true;
  std::string failed;
  auto check = [&](bool c, const char* what) {
    ++checks;
    if (!c && failed.find(what) == std::string::npos) failed += std::string(" ") + what;
    ok &= c;
  };

  // Simplex conservation along trajectories.
  for (auto [p, n] : {std::pair{2, 10}, std::pair{3, 5}}) {
    PayoffTensor t = sample_payoffs(GameParams{p, n, 0.3, 1});
    IntegratorOptions o;
    o.record_every = 1.0;
    o.t_max = 50;
    auto r = integrate(sample_initial(rng, p, n), t, 0.2, o);
    for (const auto& [time, s] : r.path) check(s.simplex_defect() < 1e-12, "simplex");
    for (int k = 0; k < 20; ++k) {
      auto dx = ql_rhs(sample_initial(rng, p, n), t, 0.5);
      for (int i = 0; i < p; ++i) {
        double sum = 0;
        for (int a = 0; a < n; ++a) sum += dx[std::size_t(i) * n + a];
        check(std::abs(sum) < 1e-12, "simplex");
      }
    }
  }

  // Permutation equivariance under a relabelling of every player's actions.
  {
    const int p = 3, n = 4;
    PayoffTensor t = sample_payoffs(GameParams{p, n, 0.6, 2});
    std::vector<std::vector<int>> perm(p, std::vector<int>(n));
    for (auto& pi : perm) {
      std::iota(pi.begin(), pi.end(), 0);
      std::shuffle(pi.begin(), pi.end(), rng);
    }
    PayoffTensor u = PayoffTensor::zeros(p, n);
    std::vector<int> a(p), b(p);
    for (std::size_t k = 0; k < t.profiles(); ++k) {
      std::size_t rem = k;
      for (int j = p - 1; j >= 0; --j) {
        a[j] = int(rem % n);
        rem /= n;
        b[j] = perm[j][a[j]];
      }
      for (int i = 0; i < p; ++i) u.slice(i)[u.index(b)] = t.at(i, a);
    }
    StrategyProfile s = sample_initial(rng, p, n), s2(p, n);
    for (int j = 0; j < p; ++j)
      for (int c = 0; c < n; ++c) s2.x[std::size_t(j) * n + perm[j][c]] = s.x[std::size_t(j) * n + c];
    auto d1 = ql_rhs(s, t, 0.3), d2 = ql_rhs(s2, u, 0.3);
    for (int j = 0; j < p; ++j)
      for (int c = 0; c < n; ++c)
        check(std::abs(d2[std::size_t(j) * n + perm[j][c]] - d1[std::size_t(j) * n + c]) < 1e-13, "permutation");
  }

  // Covariance ensemble: PSD grid, exact endpoints, empirical moments.
  for (int p = 2; p <= 5; ++p)
    for (int k = 0; k <= 10; ++k) {
      Eigen::MatrixXd s = build_covariance(p, -1.0 + k * p / 10.0);
      check(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s).eigenvalues().minCoeff() > -1e-12, "covariance");
    }
  {
    PayoffTensor z = sample_payoffs(GameParams{2, 30, -1.0, 3});
    for (std::size_t k = 0; k < z.profiles(); ++k) check(std::abs(z.slice(0)[k] + z.slice(1)[k]) < 1e-14, "covariance");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(3, 3);
    for (std::uint64_t seed = 0; seed < 4; ++seed)
      acc += empirical_covariance(sample_payoffs(GameParams{3, 14, 1.2, 10 + seed}));
    acc /= 4.0;
    const double m = 4.0 * 14 * 14 * 14;
    Eigen::MatrixXd target = build_covariance(3, 1.2);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        check(std::abs(acc(i, j) - target(i, j)) < 4 * std::sqrt((1 + target(i, j) * target(i, j)) / m), "covariance");
  }

  // x_of_z residuals and monotonicity.
  std::uniform_real_distribution<double> uk(0.2, 3.0), ua(-2.0, 1.0), ub(0.05, 2.0), uz(-6.0, 6.0);
  for (int trial = 0; trial < 50; ++trial) {
    ProfileParams pp{uk(rng), ua(rng), ub(rng)};
    double zc = pp.z_crit();
    double prev = -1;
    for (int j = 0; j < 200; ++j) {
      double z = -6.0 + 12.0 * j / 200.0;
      if (z >= zc) break;
      double x = x_of_z(pp, z).x;
      check(std::abs(x - pp.k * std::exp(pp.b * z + pp.a * x)) < 1e-12 * std::max(1.0, x), "x_of_z residual");
      check(x > prev, "x_of_z monotone");
      prev = x;
    }
  }
  return {ok, fmt("%d checks%s%s", checks, ok ? "" : ", failed:", failed.c_str())};
}

}  // namespace

int main() {
  criterion("self-consistency grid", self_consistency);
  criterion("extinction reproduction", extinction_reproduction);
  criterion("uncorrelated regime switch", regime_switch);
  criterion("large-p law", large_p_law);
  criterion("competitive limit", competitive_limit);
  criterion("simulation phase check", simulation_phase);
  criterion("null game", null_game);
  criterion("discrete/continuous", discrete_continuous);
  criterion("property suites", property_suites);
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
