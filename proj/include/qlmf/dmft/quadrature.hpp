#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "qlmf/core/errors.hpp"

namespace qlmf {

// Nodes and weights for Σ_k w_k f(z_k).
struct QuadRule {
  std::vector<double> z;
  std::vector<double> w;

  template <class F>
  double apply(F&& f) const {
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += w[k] * f(z[k]);
    return s;
  }
};

// Gauss–Legendre on [−1, 1].
inline QuadRule make_gauss_legendre(int n) {
  if (n < 1) throw ParameterError("Gauss-Legendre order must be positive");
  QuadRule r;
  r.z.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (x * p0 - p1) / (x * x - 1.0);
      double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.z[i] = -x;
    r.z[n - 1 - i] = x;
    r.w[i] = r.w[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

// Gauss–Hermite for the standard normal measure: Σ w_k f(z_k) ≈ E[f(Z)],
// weights summing to 1. Nodes from the Jacobi matrix, polished by Newton on
// the orthonormal Hermite recurrence, which also yields the weights.
inline QuadRule make_gauss_hermite_normal(int n) {
  if (n < 1) throw ParameterError("Gauss-Hermite order must be positive");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  QuadRule r;
  r.z.resize(n);
  r.w.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()[i];
    double pp = 1.0;
    for (int it = 0; it < 4; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = x * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(double(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      x -= p1 / pp;
    }
    r.z[i] = std::numbers::sqrt2 * x;
    r.w[i] = 2.0 / (pp * pp) / std::sqrt(std::numbers::pi);
    total += r.w[i];
  }
  for (double& v : r.w) v /= total;
  return r;
}

namespace detail {
template <class Make>
const QuadRule& cached_rule(int n, Make make, std::map<int, std::unique_ptr<QuadRule>>& cache, std::mutex& mu) {
  std::lock_guard lk(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<QuadRule>(make(n));
  return *slot;
}
}  // namespace detail

inline const QuadRule& gauss_hermite_normal(int n) {
  static std::map<int, std::unique_ptr<QuadRule>> cache;
  static std::mutex mu;
  return detail::cached_rule(n, make_gauss_hermite_normal, cache, mu);
}

inline const QuadRule& gauss_legendre(int n) {
  static std::map<int, std::unique_ptr<QuadRule>> cache;
  static std::mutex mu;
  return detail::cached_rule(n, make_gauss_legendre, cache, mu);
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// Layout of the rule for the standard normal truncated to z < z_crit.
//
// z_crit ≥ mask_above: Gauss–Hermite with nodes above z_crit dropped.
// Otherwise a composite Gauss–Legendre rule: panels of width ≤ panel_width on
// [z_lo, z_crit − w], then an end panel on [z_crit − w, z_crit] in the variable
// s with z = z_crit − w s², which absorbs a 1/√(z_crit − z) endpoint behaviour.
struct TruncationLayout {
  double z_lo = -13.0;
  double mask_above = 12.0;
  double panel_width = 0.75;
  double end_width = 1.0;
};

inline int panel_order(int quad_nodes) { return std::max(8, quad_nodes / 16); }

inline void append_panel(QuadRule& r, double lo, double hi, int m) {
  const QuadRule& gl = gauss_legendre(m);
  double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
  for (int k = 0; k < m; ++k) {
    double z = mid + half * gl.z[k];
    r.z.push_back(z);
    r.w.push_back(half * gl.w[k] * normal_pdf(z));
  }
}

// Rule for ∫_{−∞}^{z_crit} f(z) φ(z) dz. z_crit = +inf gives plain Gauss–Hermite.
inline QuadRule truncated_normal_rule(double z_crit, int quad_nodes, const TruncationLayout& lay = {}) {
  if (!(z_crit < lay.mask_above)) {
    const QuadRule& gh = gauss_hermite_normal(quad_nodes);
    if (std::isinf(z_crit)) return gh;
    QuadRule r;
    for (std::size_t k = 0; k < gh.z.size(); ++k)
      if (gh.z[k] < z_crit) {
        r.z.push_back(gh.z[k]);
        r.w.push_back(gh.w[k]);
      }
    return r;
  }
  const int m = panel_order(quad_nodes);
  const double lo = std::min(lay.z_lo, z_crit - 1.0);
  const double w = std::min(lay.end_width, 0.25 * (z_crit - lo));
  const double hi = z_crit - w;
  QuadRule r;
  int panels = std::max(1, int(std::ceil((hi - lo) / lay.panel_width)));
  double h = (hi - lo) / panels;
  for (int k = 0; k < panels; ++k) append_panel(r, lo + k * h, lo + (k + 1) * h, m);
  const QuadRule& gl = gauss_legendre(2 * m);
  for (int k = 0; k < 2 * m; ++k) {
    double s = 0.5 * (gl.z[k] + 1.0);
    double z = z_crit - w * s * s;
    r.z.push_back(z);
    r.w.push_back(0.5 * gl.w[k] * 2.0 * w * s * normal_pdf(z));
  }
  return r;
}

// Rule for ∫_{−∞}^{z_crit − gap} f(z) φ(z) dz where f grows like 1/(z_crit − z):
// composite panels away from z_crit and, on [z_crit − w, z_crit − gap], panels
// of unit width in u = ln(z_crit − z).
inline QuadRule log_graded_rule(double z_crit, double gap, int quad_nodes, const TruncationLayout& lay = {}) {
  if (!(z_crit < lay.mask_above)) return truncated_normal_rule(z_crit, quad_nodes, lay);
  const int m = panel_order(quad_nodes);
  const double lo = std::min(lay.z_lo, z_crit - 1.0);
  const double w = std::min(lay.end_width, 0.25 * (z_crit - lo));
  const double hi = z_crit - w;
  QuadRule r;
  int panels = std::max(1, int(std::ceil((hi - lo) / lay.panel_width)));
  double h = (hi - lo) / panels;
  for (int k = 0; k < panels; ++k) append_panel(r, lo + k * h, lo + (k + 1) * h, m);
  if (gap >= w) return r;
  const double u_lo = std::log(gap), u_hi = std::log(w);
  int upanels = std::max(1, int(std::ceil(u_hi - u_lo)));
  double du = (u_hi - u_lo) / upanels;
  const QuadRule& gl = gauss_legendre(m);
  for (int k = 0; k < upanels; ++k) {
    double a = u_lo + k * du, half = 0.5 * du, mid = a + half;
    for (int j = 0; j < m; ++j) {
      double u = mid + half * gl.z[j];
      double d = std::exp(u);
      double z = z_crit - d;
      r.z.push_back(z);
      r.w.push_back(half * gl.w[j] * d * normal_pdf(z));
    }
  }
  return r;
}

// E[f(Z)] over the standard normal, optionally restricted to Z < z_crit.
template <class F>
double gauss_expect(F&& f, int quad_nodes = 200, double z_crit = INFINITY) {
  return truncated_normal_rule(z_crit, quad_nodes).apply(f);
}

}  // namespace qlmf
