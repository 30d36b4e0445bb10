#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "qlmf/core/errors.hpp"
#include "qlmf/dmft/fixed_point.hpp"

namespace qlmf {

struct StabilityReport {
  double lhs = 0.0;              // φ · ∫_{z<z_crit} Dz |T/x − Γ q^{p−2} χ|^{−2}
  double lhs_conditional = 0.0;  // φ · E[· | z < z_crit], i.e. the restricted integral alone
  double rhs = 0.0;              // 1 / ((p−1) q^{p−2})
  double margin = 0.0;           // rhs − lhs
  bool stable = false;
};

// k = 0 mode of the linearized effective dynamics. Since Γ q^{p−2} χ = aT,
// |T/x − aT|^{−2} = x² / (T² (1 − a x)²).
inline StabilityReport stability_check(const FixedPointSolution& sol, const SolverParams& sp) {
  StabilityReport r;
  const double t = sol.t;
  r.rhs = 1.0 / ((sol.p - 1) * std::pow(sol.q, sol.p - 2));
  const QuadRule rule = std::isinf(sol.z_crit) ? gauss_hermite_normal(sp.quad_nodes)
                                               : log_graded_rule(sol.z_crit, sp.stability_gap, sp.quad_nodes);
  const ProfileParams pp = sol.profile();
  double integral = 0.0;
  for (std::size_t j = 0; j < rule.z.size(); ++j) {
    ProfilePoint pt = x_of_z(pp, rule.z[j]);
    if (!(pt.one_minus_ax > 0)) {
      r.lhs = r.lhs_conditional = INFINITY;
      r.margin = -INFINITY;
      r.stable = false;
      return r;
    }
    double g = pt.x / (t * pt.one_minus_ax);
    integral += rule.w[j] * g * g;
  }
  r.lhs_conditional = integral;
  r.lhs = sol.phi * integral;
  r.margin = r.rhs - r.lhs;
  r.stable = r.margin > 0;
  return r;
}

inline double tcrit_large_p(double gamma_hat, int p) {
  if (p < 2) throw ParameterError("p must be >= 2");
  return (gamma_hat + 1.0) * std::sqrt(std::numbers::e * (p - 1));
}

// ---------------------------------------------------------------------------
// Solution curve in (ln K, a, ln b, ln T), traced by pseudo-arclength
// continuation from high T.

struct CurvePoint {
  FixedPointSolution sol;
  StabilityReport stab;
  Eigen::Vector4d y;        // (ln K, a, ln b, ln T)
  Eigen::Vector4d tangent;  // unit, oriented along the trace
};

struct CurveOptions {
  double ds_max = 0.05;
  double ds_min = 1e-8;
  int max_points = 4000;
  double t_min = 0.05;
};

namespace detail {

inline std::optional<std::array<double, 3>> curve_losses(const Eigen::Vector4d& y, SolverParams sp) {
  sp.t = std::exp(y[3]);
  try {
    return losses(std::exp(y[0]), y[1], std::exp(y[2]), sp).l;
  } catch (const NumericDomainError&) {
    return std::nullopt;
  }
}

inline std::optional<Eigen::Matrix<double, 3, 4>> curve_jacobian(const Eigen::Vector4d& y,
                                                                 const std::array<double, 3>& f0,
                                                                 const SolverParams& sp) {
  Eigen::Matrix<double, 3, 4> j;
  for (int c = 0; c < 4; ++c) {
    Eigen::Vector4d d = y;
    double h = 1e-7 * std::max(1.0, std::abs(y[c]));
    d[c] += h;
    auto fd = curve_losses(d, sp);
    if (!fd) {
      d[c] = y[c] - h;
      fd = curve_losses(d, sp);
      if (!fd) return std::nullopt;
      h = -h;
    }
    for (int i = 0; i < 3; ++i) j(i, c) = ((*fd)[i] - f0[i]) / h;
  }
  return j;
}

inline Eigen::Vector4d null_direction(const Eigen::Matrix<double, 3, 4>& j) {
  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> svd(j, Eigen::ComputeFullV);
  return svd.matrixV().col(3);
}

// Newton on [F(y); τ·(y − y_pred)] = 0.
inline std::optional<Eigen::Vector4d> arclength_correct(Eigen::Vector4d y, const Eigen::Vector4d& tau,
                                                        const SolverParams& sp) {
  const Eigen::Vector4d y_pred = y;
  for (int it = 0; it < 30; ++it) {
    auto f = curve_losses(y, sp);
    if (!f) return std::nullopt;
    double fmax = max_abs(*f);
    auto j = curve_jacobian(y, *f, sp);
    if (!j) return std::nullopt;
    Eigen::Matrix4d a;
    a.topRows<3>() = *j;
    a.row(3) = tau.transpose();
    Eigen::Vector4d r((*f)[0], (*f)[1], (*f)[2], tau.dot(y - y_pred));
    Eigen::Vector4d dy = a.fullPivLu().solve(-r);
    if (!dy.allFinite()) return std::nullopt;
    y += dy;
    if (dy.cwiseAbs().maxCoeff() < 1e-13 && fmax < 1e-12) {
      auto fe = curve_losses(y, sp);
      if (fe && sum_squares(*fe) < sp.newton_tol) return y;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

inline CurvePoint make_curve_point(const Eigen::Vector4d& y, const Eigen::Vector4d& tangent, SolverParams sp) {
  sp.t = std::exp(y[3]);
  CurvePoint cp;
  cp.y = y;
  cp.tangent = tangent;
  cp.sol = assemble_solution({y[0], y[1], y[2]}, sp);
  cp.stab = stability_check(cp.sol, sp);
  return cp;
}

}  // namespace detail

// Points along the solution curve starting at T = t_start on the branch
// continued from high T, heading toward decreasing T. Tracing ends when the
// curve leaves [t_min, t_start] or can no longer be continued.
inline std::vector<CurvePoint> trace_solution_curve(const SolverParams& base, double t_start,
                                                    const CurveOptions& co = {}) {
  if (base.gamma == 0.0) throw ParameterError("curve tracing requires gamma != 0");
  SolverParams sp = base;
  sp.t = t_start;
  FixedPointSolution s0 = solve_fixed_point(sp);
  Eigen::Vector4d y(std::log(s0.k), s0.a, std::log(s0.b), std::log(t_start));
  auto f0 = detail::curve_losses(y, sp);
  auto j0 = f0 ? detail::curve_jacobian(y, *f0, sp) : std::nullopt;
  if (!j0) throw SolverError("cannot start curve", t_start, {}, INFINITY);
  Eigen::Vector4d tau = detail::null_direction(*j0);
  if (tau[3] > 0) tau = -tau;

  std::vector<CurvePoint> pts;
  pts.push_back(detail::make_curve_point(y, tau, sp));
  double ds = co.ds_max;
  const double lt_max = std::log(t_start) + 1e-12, lt_min = std::log(co.t_min);
  while (int(pts.size()) < co.max_points) {
    const CurvePoint& last = pts.back();
    auto yc = detail::arclength_correct(last.y + ds * last.tangent, last.tangent, sp);
    std::optional<Eigen::Vector4d> tn;
    if (yc) {
      auto fc = detail::curve_losses(*yc, sp);
      auto jc = fc ? detail::curve_jacobian(*yc, *fc, sp) : std::nullopt;
      if (jc) {
        Eigen::Vector4d t = detail::null_direction(*jc);
        if (t.dot(last.tangent) < 0) t = -t;
        // Reject steps that swing the tangent too far (possible branch jump).
        if (t.dot(last.tangent) > 0.9) tn = t;
      }
    }
    if (!tn) {
      ds *= 0.5;
      if (ds < co.ds_min) break;
      continue;
    }
    pts.push_back(detail::make_curve_point(*yc, *tn, sp));
    if ((*yc)[3] > lt_max || (*yc)[3] < lt_min) break;
    ds = std::min(ds * 1.5, co.ds_max);
  }
  return pts;
}

namespace detail {

// Point on the curve at arclength s past `from`, along its tangent.
inline std::optional<CurvePoint> curve_point_at(const CurvePoint& from, double s, const SolverParams& sp) {
  auto y = arclength_correct(from.y + s * from.tangent, from.tangent, sp);
  if (!y) return std::nullopt;
  return make_curve_point(*y, from.tangent, sp);
}

// Refines a stability change between pts[i] and pts[i+1]; returns its T.
inline double refine_margin_crossing(const CurvePoint& a, const CurvePoint& b, const SolverParams& sp, double tol) {
  double s_lo = 0.0, s_hi = (b.y - a.y).dot(a.tangent);
  double t_lo = a.sol.t, t_hi = b.sol.t;
  const bool stable_lo = a.stab.stable;
  for (int it = 0; it < 60 && std::abs(t_hi - t_lo) > 0.25 * tol; ++it) {
    double s = 0.5 * (s_lo + s_hi);
    auto cp = curve_point_at(a, s, sp);
    if (!cp) break;
    if (cp->stab.stable == stable_lo) {
      s_lo = s;
      t_lo = cp->sol.t;
    } else {
      s_hi = s;
      t_hi = cp->sol.t;
    }
  }
  return 0.5 * (t_lo + t_hi);
}

// Extremum of T(s) near pts[i] (three points bracketing a turning point).
inline double refine_fold(const CurvePoint& a, const CurvePoint& b, const CurvePoint& c, const SolverParams& sp) {
  // Golden-section search on T along the arc from a.
  const bool is_min = b.y[3] < a.y[3];
  double lo = 0.0, hi = (c.y - a.y).dot(a.tangent);
  auto tval = [&](double s) -> double {
    auto cp = curve_point_at(a, s, sp);
    if (!cp) return is_min ? INFINITY : -INFINITY;
    return cp->sol.t;
  };
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = tval(x1), f2 = tval(x2);
  for (int it = 0; it < 40; ++it) {
    bool left = is_min ? f1 < f2 : f1 > f2;
    if (left) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = tval(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = tval(x2);
    }
  }
  double best = is_min ? std::min({f1, f2, b.sol.t}) : std::max({f1, f2, b.sol.t});
  return best;
}

}  // namespace detail

struct CriticalTemperatureDetail {
  double t_crit = NAN;
  std::vector<double> fold_ts;
  std::vector<double> crossing_ts;
  std::vector<CurvePoint> curve;
};

// T_crit is the largest T below which the number of linearly stable fixed
// points differs from one: either the continued branch loses stability, or a
// second stable solution appears, or solutions cease to exist.
inline CriticalTemperatureDetail critical_temperature_detail(double gamma, int p, double tol = 1e-3,
                                                             int quad_nodes = 200, double stability_gap = 1e-12,
                                                             const CurveOptions& co = {}) {
  if (p < 2 || !(gamma >= -1.0 && gamma <= p - 1.0)) throw ParameterError("gamma must lie in [-1, p-1]");
  const double t_hi = continuation_start_temperature(p, gamma);
  const double t_lo = 0.1;
  SolverParams sp;
  sp.p = p;
  sp.gamma = gamma;
  sp.quad_nodes = quad_nodes;
  sp.stability_gap = stability_gap;
  CriticalTemperatureDetail out;

  if (gamma == 0.0) {
    // Bisection on the margin of the uncorrelated solution (exact moments).
    auto margin = [&](double t) -> double {
      SolverParams s = sp;
      s.t = t;
      try {
        FixedPointSolution sol = gamma_zero_solve(s, MomentClosure::Exact);
        return stability_check(sol, s).margin;
      } catch (const SolverError&) {
        return -INFINITY;  // no solution counts as no stable solution
      }
    };
    double lo = t_lo, hi = t_hi;
    double m_lo = margin(lo), m_hi = margin(hi);
    if (!(m_hi > 0) || m_lo > 0) throw BracketError("no stability change in bracket", {lo, hi}, {m_lo, m_hi});
    while (hi - lo > tol) {
      double mid = 0.5 * (lo + hi);
      (margin(mid) > 0 ? hi : lo) = mid;
    }
    out.t_crit = 0.5 * (lo + hi);
    return out;
  }

  CurveOptions opts = co;
  opts.t_min = std::min(opts.t_min, t_lo);
  out.curve = trace_solution_curve(sp, t_hi, opts);
  const auto& c = out.curve;
  if (c.empty() || !c.front().stab.stable)
    throw BracketError("continued branch unstable at the top of the bracket", {t_hi},
                       {c.empty() ? NAN : c.front().stab.margin});

  // Break the curve into pieces of constant stability that are monotone in T.
  struct Piece {
    double t_min, t_max;
    bool stable;
  };
  std::vector<Piece> pieces;
  std::vector<double> events;
  double piece_start = c.front().sol.t;
  double piece_end_t = piece_start;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    double t_next = c[i + 1].sol.t;
    bool split = false;
    double t_split = t_next;
    if (c[i].stab.stable != c[i + 1].stab.stable) {
      t_split = detail::refine_margin_crossing(c[i], c[i + 1], sp, tol);
      out.crossing_ts.push_back(t_split);
      split = true;
    } else if (i + 2 < c.size() && (c[i + 1].y[3] - c[i].y[3]) * (c[i + 2].y[3] - c[i + 1].y[3]) < 0) {
      t_split = detail::refine_fold(c[i], c[i + 1], c[i + 2], sp);
      out.fold_ts.push_back(t_split);
      split = true;
    }
    if (split) {
      pieces.push_back({std::min(piece_start, t_split), std::max(piece_start, t_split), c[i].stab.stable});
      events.push_back(t_split);
      piece_start = t_split;
    }
    piece_end_t = t_next;
  }
  pieces.push_back({std::min(piece_start, piece_end_t), std::max(piece_start, piece_end_t), c.back().stab.stable});
  // Where the trace stopped short of the bracket, solutions end there.
  events.push_back(piece_end_t);

  std::sort(events.begin(), events.end(), std::greater<>());
  auto stable_count = [&](double t) {
    int n = 0;
    for (const auto& pc : pieces)
      if (pc.stable && t >= pc.t_min && t <= pc.t_max) ++n;
    return n;
  };
  for (std::size_t e = 0; e < events.size(); ++e) {
    double upper = events[e];
    double lower = e + 1 < events.size() ? events[e + 1] : t_lo;
    if (upper <= t_lo) break;
    if (upper - lower < 1e-12) continue;
    if (stable_count(0.5 * (upper + lower)) != 1) {
      out.t_crit = upper;
      return out;
    }
  }
  std::vector<double> ts, ms;
  for (const auto& cp : c) {
    ts.push_back(cp.sol.t);
    ms.push_back(cp.stab.margin);
  }
  throw BracketError("stability does not change in the bracket", ts, ms);
}

inline double critical_temperature(double gamma, int p, double tol = 1e-3) {
  return critical_temperature_detail(gamma, p, tol).t_crit;
}

}  // namespace qlmf
