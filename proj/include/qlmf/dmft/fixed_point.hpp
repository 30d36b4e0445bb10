#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qlmf/core/errors.hpp"
#include "qlmf/dmft/profile.hpp"
#include "qlmf/dmft/quadrature.hpp"

namespace qlmf {

struct SolverParams {
  int p = 2;
  double gamma = 0.0;
  double t = 1.0;
  int quad_nodes = 200;
  double newton_tol = 1e-12;
  int max_iter = 200;
  // Width of the neighbourhood of z_crit left out of the stability integral,
  // whose integrand diverges like 1/(z_crit − z).
  double stability_gap = 1e-12;

  double gamma_hat() const { return gamma / (p - 1); }

  void validate() const {
    if (p < 2) throw ParameterError("p must be >= 2");
    if (!(t > 0) || !std::isfinite(t)) throw ParameterError("T must be positive");
    if (quad_nodes < 40 || quad_nodes % 2 != 0) throw ParameterError("quad_nodes must be even and >= 40");
    if (!std::isfinite(gamma)) throw ParameterError("gamma must be finite");
    if (!(newton_tol > 0) || max_iter < 1) throw ParameterError("invalid Newton settings");
    if (!(stability_gap > 0)) throw ParameterError("stability_gap must be positive");
  }
};

enum class Regime { Interior, Boundary };

inline const char* to_string(Regime r) { return r == Regime::Interior ? "interior" : "boundary"; }

// Second-moment relation used by the uncorrelated (Γ = 0) solve.
//   Exact:     q = ⟨x²⟩ = K² e^{2b²} Φ(z_c − 2b)
//   Linear:    q = K e^{2b²} Φ(z_c − 2b), interior threshold √(3e(p−1)/2)
enum class MomentClosure { Linear, Exact };

struct FixedPointSolution {
  int p = 2;
  double gamma = 0.0;
  double t = 1.0;
  double k = 1.0;
  double a = 0.0;
  double b = 0.0;
  double q = 1.0;
  double chi = std::numeric_limits<double>::quiet_NaN();
  double z_crit = std::numeric_limits<double>::infinity();
  double phi = 1.0;
  double extinction = 0.0;  // 1 − φ, evaluated without cancellation
  Regime regime = Regime::Interior;
  double residual = 0.0;
  std::array<double, 3> losses{};
  int quad_nodes = 200;
  MomentClosure closure = MomentClosure::Exact;

  ProfileParams profile() const { return {k, a, b}; }
};

inline double extinction_rate(const FixedPointSolution& s) {
  return s.regime == Regime::Interior ? 0.0 : s.extinction;
}

namespace detail {

inline double q_of_b(double b, double t, int p) { return std::pow(b * t, 2.0 / (p - 1)); }

// Survival-region expectations of x, x² and dx/dz for profile (k, a, b).
struct Moments {
  double m1 = 0, m2 = 0, dxdz = 0;
};

inline Moments profile_moments(const ProfileParams& pp, int quad_nodes) {
  QuadRule rule = truncated_normal_rule(pp.z_crit(), quad_nodes);
  Moments m;
  for (std::size_t j = 0; j < rule.z.size(); ++j) {
    ProfilePoint pt = x_of_z(pp, rule.z[j]);
    if (!(pt.one_minus_ax > 0)) throw NumericDomainError("branch point reached on a quadrature node");
    m.m1 += rule.w[j] * pt.x;
    m.m2 += rule.w[j] * pt.x * pt.x;
    m.dxdz += rule.w[j] * pp.b * pt.x / pt.one_minus_ax;
  }
  return m;
}

}  // namespace detail

struct LossValues {
  std::array<double, 3> l{};
  double q = 1.0;
  double chi = std::numeric_limits<double>::quiet_NaN();
};

// (L1, L2, L3) = (q^{(p−1)/2} χ − ⟨dx/dz⟩, q − ⟨x²⟩, 1 − ⟨x⟩) with
// q = (bT)^{2/(p−1)} and χ = aT/(Γ q^{p−2}). At Γ = 0 the response loss is
// vacuous and reported as 0.
inline LossValues losses(double k, double a, double b, const SolverParams& sp) {
  if (!(k > 0) || !(b > 0)) throw NumericDomainError("losses require k > 0 and b > 0");
  LossValues out;
  out.q = detail::q_of_b(b, sp.t, sp.p);
  detail::Moments m = detail::profile_moments({k, a, b}, sp.quad_nodes);
  if (sp.gamma != 0.0) {
    out.chi = a * sp.t / (sp.gamma * std::pow(out.q, sp.p - 2));
    out.l[0] = b * sp.t * out.chi - m.dxdz;
  }
  out.l[1] = out.q - m.m2;
  out.l[2] = 1.0 - m.m1;
  for (double v : out.l)
    if (!std::isfinite(v)) throw NumericDomainError("non-finite loss");
  return out;
}

inline double sum_squares(const std::array<double, 3>& l) { return l[0] * l[0] + l[1] * l[1] + l[2] * l[2]; }
inline double max_abs(const std::array<double, 3>& l) {
  return std::max({std::abs(l[0]), std::abs(l[1]), std::abs(l[2])});
}

// Internal coordinates u = (ln K, a, ln b).
using Coords = std::array<double, 3>;

inline Coords to_coords(const FixedPointSolution& s) { return {std::log(s.k), s.a, std::log(s.b)}; }

inline FixedPointSolution assemble_solution(const Coords& u, const SolverParams& sp) {
  FixedPointSolution s;
  s.p = sp.p;
  s.gamma = sp.gamma;
  s.t = sp.t;
  s.quad_nodes = sp.quad_nodes;
  s.k = std::exp(u[0]);
  s.a = u[1];
  s.b = std::exp(u[2]);
  LossValues lv = losses(s.k, s.a, s.b, sp);
  s.q = lv.q;
  s.chi = lv.chi;
  s.losses = lv.l;
  s.residual = sum_squares(lv.l);
  s.z_crit = s.profile().z_crit();
  if (std::isinf(s.z_crit)) {
    s.regime = Regime::Interior;
    s.phi = 1.0;
    s.extinction = 0.0;
  } else {
    s.regime = Regime::Boundary;
    s.phi = normal_cdf(s.z_crit);
    s.extinction = normal_sf(s.z_crit);
  }
  return s;
}

struct NewtonResult {
  Coords u{};
  double max_loss = INFINITY;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton with forward-difference Jacobian. The step is halved up to
// 30 times until the largest loss decreases.
inline NewtonResult newton_fixed_point(Coords u, const SolverParams& sp, int max_iter = -1,
                                       double target = 1e-14) {
  if (max_iter < 0) max_iter = sp.max_iter;
  auto eval = [&](const Coords& v) -> std::optional<std::array<double, 3>> {
    try {
      return losses(std::exp(v[0]), v[1], std::exp(v[2]), sp).l;
    } catch (const NumericDomainError&) {
      return std::nullopt;
    }
  };
  NewtonResult r;
  r.u = u;
  auto f = eval(u);
  if (!f) return r;
  r.max_loss = max_abs(*f);
  const bool gamma_zero = sp.gamma == 0.0;
  for (int it = 0; it < max_iter; ++it) {
    r.iterations = it;
    if (r.max_loss <= target) break;
    Eigen::Matrix3d jac;
    for (int j = 0; j < 3; ++j) {
      Coords d = r.u;
      double h = 1e-7 * std::max(1.0, std::abs(d[j]));
      d[j] += h;
      auto fd = eval(d);
      if (!fd) {
        d[j] = r.u[j] - h;
        fd = eval(d);
        if (!fd) return r;
        h = -h;
      }
      for (int i = 0; i < 3; ++i) jac(i, j) = ((*fd)[i] - (*f)[i]) / h;
    }
    Eigen::Vector3d rhs(-(*f)[0], -(*f)[1], -(*f)[2]);
    Eigen::Vector3d step;
    if (gamma_zero) {
      // a is pinned at 0; solve (L2, L3) in (ln K, ln b).
      Eigen::Matrix2d j2;
      j2 << jac(1, 0), jac(1, 2), jac(2, 0), jac(2, 2);
      Eigen::Vector2d s2 = j2.fullPivLu().solve(Eigen::Vector2d(rhs[1], rhs[2]));
      step = Eigen::Vector3d(s2[0], 0.0, s2[1]);
    } else {
      step = jac.fullPivLu().solve(rhs);
    }
    if (!step.allFinite()) return r;
    double lambda = 1.0;
    bool accepted = false;
    for (int half = 0; half <= 30; ++half, lambda *= 0.5) {
      Coords cand{r.u[0] + lambda * step[0], r.u[1] + lambda * step[1], r.u[2] + lambda * step[2]};
      auto fc = eval(cand);
      if (fc && max_abs(*fc) < r.max_loss) {
        r.u = cand;
        f = fc;
        r.max_loss = max_abs(*fc);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    if (lambda * step.cwiseAbs().maxCoeff() < 1e-16) break;
  }
  r.converged = sum_squares(*f) < sp.newton_tol;
  return r;
}

// Leading-order large-T guess: b ≈ 1/T, a ≈ Γ/T², ⟨x⟩ ≈ 1.
inline Coords high_temperature_guess(const SolverParams& sp) {
  double b = 1.0 / sp.t;
  double a = sp.gamma / (sp.t * sp.t);
  return {-0.5 * b * b - a, a, std::log(b)};
}

inline double continuation_start_temperature(int p, double gamma) {
  double gh = gamma / (p - 1);
  return 4.0 * (std::abs(gh) + 1.0) * std::sqrt(std::numbers::e * (p - 1));
}

struct ContinuationOptions {
  double max_rel_step = 0.1;   // largest ΔT / T
  double min_rel_step = 1e-9;  // give up below this
  double max_q_jump = 0.1;     // reject steps whose q moves more than this
};

namespace detail {

inline FixedPointSolution solve_at(const Coords& guess, const SolverParams& sp) {
  NewtonResult nr = newton_fixed_point(guess, sp);
  if (!nr.converged)
    throw SolverError("Newton did not converge at T=" + std::to_string(sp.t), sp.t,
                      {nr.u[0], nr.u[1], nr.u[2]}, nr.max_loss * nr.max_loss);
  return assemble_solution(nr.u, sp);
}

inline void check_sign_contract(const FixedPointSolution& s) {
  if ((s.gamma > 0 && !(s.a > 0)) || (s.gamma < 0 && !(s.a < 0)))
    throw SolverError("converged to a solution with sign(a) != sign(gamma)", s.t, {std::log(s.k), s.a, std::log(s.b)},
                      s.residual);
}

}  // namespace detail

// Continuation in T from `from` (a converged solution) to `sp.t`.
inline FixedPointSolution continue_to(const FixedPointSolution& from, const SolverParams& sp,
                                      const ContinuationOptions& co = {}) {
  SolverParams cur = sp;
  FixedPointSolution prev = from, prev2 = from;
  bool have_two = false;
  double t = from.t;
  const double target = sp.t;
  double dt = std::min(co.max_rel_step * t, std::abs(target - t));
  const double dir = target < t ? -1.0 : 1.0;
  while (t != target) {
    double t_next = t + dir * dt;
    if ((dir < 0 && t_next < target) || (dir > 0 && t_next > target) || std::abs(t_next - target) < 1e-12 * target)
      t_next = target;
    cur.t = t_next;
    Coords up = to_coords(prev);
    if (have_two) {
      Coords u2 = to_coords(prev2);
      double s = (t_next - prev.t) / (prev.t - prev2.t);
      for (int i = 0; i < 3; ++i) up[i] += s * (up[i] - u2[i]);
    }
    std::optional<FixedPointSolution> got;
    try {
      FixedPointSolution s = detail::solve_at(up, cur);
      if (std::abs(s.q - prev.q) <= co.max_q_jump) got = s;
    } catch (const SolverError&) {
    }
    if (!got) {
      dt *= 0.5;
      if (dt < co.min_rel_step * t)
        throw SolverError("continuation stalled near T=" + std::to_string(t), t,
                          {std::log(prev.k), prev.a, std::log(prev.b)}, prev.residual);
      continue;
    }
    prev2 = prev;
    prev = *got;
    have_two = true;
    t = t_next;
    dt = std::min(dt * 1.5, co.max_rel_step * t);
  }
  return prev;
}

inline FixedPointSolution solve_at_high_temperature(const SolverParams& sp) {
  SolverParams hi = sp;
  for (int attempt = 0; attempt < 8; ++attempt) {
    try {
      return detail::solve_at(high_temperature_guess(hi), hi);
    } catch (const SolverError&) {
      hi.t *= 2.0;
    }
  }
  throw SolverError("no high-temperature solution", hi.t, {}, INFINITY);
}

// Γ ≠ 0 fixed point, continued down from high T. With `warm`, continuation
// starts from that solution instead.
inline FixedPointSolution solve_fixed_point(const SolverParams& sp, const FixedPointSolution* warm = nullptr,
                                            const ContinuationOptions& co = {}) {
  sp.validate();
  if (sp.gamma == 0.0) throw ParameterError("gamma = 0 is handled by gamma_zero_solve");
  FixedPointSolution start;
  if (warm && warm->p == sp.p && warm->gamma == sp.gamma && warm->quad_nodes == sp.quad_nodes) {
    start = *warm;
  } else {
    SolverParams hi = sp;
    hi.t = std::max(sp.t, continuation_start_temperature(sp.p, sp.gamma));
    start = solve_at_high_temperature(hi);
  }
  FixedPointSolution s = continue_to(start, sp, co);
  detail::check_sign_contract(s);
  return s;
}

// Solutions along `ts`, each warm-started from the previous one.
inline std::vector<FixedPointSolution> continuation_path(const SolverParams& sp, const std::vector<double>& ts,
                                                         const ContinuationOptions& co = {}) {
  std::vector<FixedPointSolution> out;
  for (double t : ts) {
    SolverParams cur = sp;
    cur.t = t;
    out.push_back(solve_fixed_point(cur, out.empty() ? nullptr : &out.back(), co));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uncorrelated games.

inline double gamma_zero_threshold(int p, MomentClosure c = MomentClosure::Linear) {
  if (p < 2) throw ParameterError("p must be >= 2");
  double kappa = c == MomentClosure::Linear ? 1.5 : 1.0;
  return std::sqrt(kappa * std::numbers::e * (p - 1));
}

namespace detail {

inline double log_normal_cdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  // Mills-ratio asymptote.
  double z2 = z * z;
  return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

// ln(q-relation right-hand side) − ln q with K eliminated through ⟨x⟩ = 1.
inline double gz_gap(double log_q, double zc, double t, int p, MomentClosure c) {
  double b = std::exp(0.5 * (p - 1) * log_q) / t;
  double lrhs = c == MomentClosure::Exact
                    ? b * b + log_normal_cdf(zc - 2 * b) - 2.0 * log_normal_cdf(zc - b)
                    : 1.5 * b * b + log_normal_cdf(zc - 2 * b) - log_normal_cdf(zc - b);
  return lrhs - log_q;
}

// First local minimum of gz_gap over ln q ≥ −1, scanning upward while
// b = q^{(p−1)/2}/T stays below 50.
inline std::pair<double, double> gz_first_minimum(double zc, double t, int p, MomentClosure c) {
  const double h = 0.02;
  const double x_max = 2.0 * std::log(50.0 * t) / (p - 1);
  double x0 = -1.0, f0 = gz_gap(x0, zc, t, p, c);
  double x1 = x0 + h, f1 = gz_gap(x1, zc, t, p, c);
  while (f1 < f0) {
    if (x1 + h > x_max) return {x1, f1};
    x0 = x1;
    f0 = f1;
    x1 += h;
    f1 = gz_gap(x1, zc, t, p, c);
  }
  // Minimum bracketed in [x0 − h, x1]; golden section.
  double lo = x0 - h, hi = x1;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c1 = hi - g * (hi - lo), c2 = lo + g * (hi - lo);
  double fc1 = gz_gap(c1, zc, t, p, c), fc2 = gz_gap(c2, zc, t, p, c);
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    if (fc1 < fc2) {
      hi = c2;
      c2 = c1;
      fc2 = fc1;
      c1 = hi - g * (hi - lo);
      fc1 = gz_gap(c1, zc, t, p, c);
    } else {
      lo = c1;
      c1 = c2;
      fc1 = fc2;
      c2 = lo + g * (hi - lo);
      fc2 = gz_gap(c2, zc, t, p, c);
    }
  }
  double xm = 0.5 * (lo + hi);
  return {xm, gz_gap(xm, zc, t, p, c)};
}

inline FixedPointSolution gz_assemble(double k, double b, double zc, const SolverParams& sp, MomentClosure c) {
  FixedPointSolution s;
  s.p = sp.p;
  s.gamma = 0.0;
  s.t = sp.t;
  s.quad_nodes = sp.quad_nodes;
  s.closure = c;
  s.k = k;
  s.a = 0.0;
  s.b = b;
  s.q = q_of_b(b, sp.t, sp.p);
  s.z_crit = zc;
  s.regime = std::isinf(zc) ? Regime::Interior : Regime::Boundary;
  s.phi = std::isinf(zc) ? 1.0 : normal_cdf(zc);
  s.extinction = std::isinf(zc) ? 0.0 : normal_sf(zc);
  const QuadRule rule = truncated_normal_rule(zc, sp.quad_nodes);
  double m1 = 0, m2 = 0;
  for (std::size_t j = 0; j < rule.z.size(); ++j) {
    double x = k * std::exp(b * rule.z[j]);
    m1 += rule.w[j] * x;
    m2 += rule.w[j] * x * x;
  }
  s.losses = {0.0, s.q - (c == MomentClosure::Exact ? m2 : m2 / k), 1.0 - m1};
  s.residual = sum_squares(s.losses);
  return s;
}

}  // namespace detail

// Γ = 0: x = K e^{bz}. Interior when T is at or above the threshold, otherwise
// truncated at the largest z_crit for which the q-relation still has a root.
inline FixedPointSolution gamma_zero_solve(const SolverParams& sp, MomentClosure c = MomentClosure::Linear) {
  sp.validate();
  if (sp.gamma != 0.0) throw ParameterError("gamma_zero_solve requires gamma = 0");
  const int p = sp.p;
  const double t = sp.t;
  const double kappa = c == MomentClosure::Linear ? 1.5 : 1.0;

  if (t >= gamma_zero_threshold(p, c)) {
    // ln q = κ q^{p−1}/T²: smaller root in [0, ln q*], q*^{p−1} = T²/(κ(p−1)).
    auto g = [&](double lq) { return lq - kappa * std::exp((p - 1) * lq) / (t * t); };
    double lo = 0.0, hi = std::log(t * t / (kappa * (p - 1))) / (p - 1);
    if (g(hi) < 0) hi = lo;  // rounding at the threshold itself
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
      double mid = 0.5 * (lo + hi);
      (g(mid) < 0 ? lo : hi) = mid;
    }
    double b = std::exp(0.5 * (p - 1) * hi) / t;
    Coords u{-0.5 * b * b, 0.0, std::log(b)};
    SolverParams sp0 = sp;
    if (c == MomentClosure::Exact) {
      NewtonResult nr = newton_fixed_point(u, sp0, 20);
      if (nr.max_loss < std::sqrt(sp.newton_tol)) u = nr.u;
    }
    FixedPointSolution s = detail::gz_assemble(std::exp(u[0]), std::exp(u[2]), INFINITY, sp, c);
    if (!(s.residual < sp.newton_tol))
      throw SolverError("gamma = 0 interior solve failed", t, {u[0], 0.0, u[2]}, s.residual);
    return s;
  }

  // Boundary: h(zc) = min_q gap(q, zc) increases through 0 at the largest admissible zc.
  auto h = [&](double zc) { return detail::gz_first_minimum(zc, t, p, c).second; };
  double zc_hi = 40.0;
  double zc_lo = 0.0;
  int guard = 0;
  while (h(zc_lo) > 0 && guard++ < 60) zc_lo -= 0.5;
  if (h(zc_lo) > 0 || h(zc_hi) < 0)
    throw SolverError("gamma = 0 boundary solve could not bracket z_crit", t, {}, INFINITY);
  for (int it = 0; it < 200 && zc_hi - zc_lo > 1e-13 * std::max(1.0, std::abs(zc_lo)); ++it) {
    double mid = 0.5 * (zc_lo + zc_hi);
    (h(mid) <= 0 ? zc_lo : zc_hi) = mid;
  }
  double zc = zc_lo;
  double lq = detail::gz_first_minimum(zc, t, p, c).first;
  if (lq > 2.0 * std::log(50.0 * t) / (p - 1) - 0.05)
    throw SolverError("gamma = 0 boundary solve found no tangency", t, {}, INFINITY);
  double b = std::exp(0.5 * (p - 1) * lq) / t;
  double k = std::exp(-0.5 * b * b) / normal_cdf(zc - b);
  FixedPointSolution s = detail::gz_assemble(k, b, zc, sp, c);
  if (!(s.residual < sp.newton_tol))
    throw SolverError("gamma = 0 boundary solve failed", t, {std::log(k), 0.0, std::log(b)}, s.residual);
  return s;
}

// Dispatches on Γ.
inline FixedPointSolution solve_dmft(const SolverParams& sp, MomentClosure c = MomentClosure::Linear) {
  return sp.gamma == 0.0 ? gamma_zero_solve(sp, c) : solve_fixed_point(sp);
}

}  // namespace qlmf
