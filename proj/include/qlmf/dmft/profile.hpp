#pragma once

#include <cmath>
#include <limits>

#include <boost/math/special_functions/lambert_w.hpp>

#include "qlmf/core/errors.hpp"

namespace qlmf {

// Fixed-point profile x(z) solving x = K exp(b z + a x).
struct ProfilePoint {
  double x = 0.0;
  double one_minus_ax = 1.0;  // 1 − a x, kept accurate near the branch point
};

struct ProfileParams {
  double k = 1.0;
  double a = 0.0;
  double b = 0.0;

  // Branch-merge point for a > 0, +inf otherwise.
  double z_crit() const {
    if (a <= 0) return std::numeric_limits<double>::infinity();
    return -(1.0 + std::log(a * k)) / b;
  }
};

namespace detail {

// Solves u + ln u = L for u > 0 (u = W0(e^L)).
inline double w0_of_exp(double log_arg) {
  if (log_arg < 700.0) return boost::math::lambert_w0(std::exp(log_arg));
  double u = log_arg - std::log(log_arg);
  for (int it = 0; it < 50; ++it) {
    double du = (u + std::log(u) - log_arg) / (1.0 + 1.0 / u);
    u -= du;
    if (std::abs(du) <= 1e-16 * u) break;
  }
  return u;
}

// Bottom branch: u ∈ (0, 1] with ln u − u = −1 − s, s ≥ 0. Returns (u, 1 − u).
inline void bottom_branch(double s, double& u, double& v) {
  if (s < 0.25) {
    // Near the merge point work with v = 1 − u: log1p(−v) + v + s = 0.
    double r = std::sqrt(2.0 * s);
    v = r - r * r / 3.0 + 11.0 * r * r * r / 72.0;
    for (int it = 0; it < 50; ++it) {
      if (v <= 0.0) {
        v = 0.0;
        break;
      }
      double g = std::log1p(-v) + v + s;
      double dg = -v / (1.0 - v);
      double dv = g / dg;
      v -= dv;
      if (std::abs(dv) <= 1e-16 * v) break;
    }
    u = 1.0 - v;
    return;
  }
  double arg = -std::exp(-1.0 - s);
  u = -boost::math::lambert_w0(arg);
  for (int it = 0; it < 3; ++it) {
    double h = std::log(u) - u + 1.0 + s;
    double du = h / (1.0 / u - 1.0);
    u -= du;
    if (std::abs(du) <= 1e-16 * u) break;
  }
  v = 1.0 - u;
}

}  // namespace detail

inline ProfilePoint x_of_z(const ProfileParams& pp, double z) {
  const double k = pp.k, a = pp.a, b = pp.b;
  if (!(k > 0) || !std::isfinite(a) || !std::isfinite(b) || !std::isfinite(z))
    throw NumericDomainError("x_of_z: invalid profile parameters");
  ProfilePoint out;
  if (a == 0.0) {
    out.x = k * std::exp(b * z);
  } else if (a < 0.0) {
    const double c = -a;
    double u = detail::w0_of_exp(std::log(c * k) + b * z);
    out.x = u / c;
    out.one_minus_ax = 1.0 + u;
  } else {
    const double zc = pp.z_crit();
    const double d = zc - z;
    if (d < 0.0) {
      out.x = 0.0;
      out.one_minus_ax = 1.0;
      return out;
    }
    double u, v;
    detail::bottom_branch(b * d, u, v);
    out.x = u / a;
    out.one_minus_ax = v;
  }
  if (!std::isfinite(out.x)) throw NumericDomainError("x_of_z: non-finite profile value");
  return out;
}

}  // namespace qlmf
