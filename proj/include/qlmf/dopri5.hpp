#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace qlmf {

// Dormand–Prince 5(4) tableau.
namespace dp {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                        b6 = 11.0 / 84;
// b − b̂ for the embedded 4th-order solution.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dp

struct StepControl {
  double rtol = 1e-6;
  double atol = 1e-9;
  double max_step = 0.5;
  double min_step = 1e-12;
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 10.0;
};

// One embedded Dormand–Prince trial step from (y, f0) with step h.
// Writes the 5th-order proposal to y_new and f(y_new) to f_new, and returns the
// scaled RMS error norm.
template <class Rhs>
class Dopri5 {
 public:
  Dopri5(Rhs rhs, std::size_t dim) : rhs_(std::move(rhs)), k2_(dim), k3_(dim), k4_(dim), k5_(dim), k6_(dim), tmp_(dim) {}

  double trial(const std::vector<double>& y, const std::vector<double>& f0, double h,
               const StepControl& sc, std::vector<double>& y_new, std::vector<double>& f_new) {
    using namespace dp;
    const std::size_t n = y.size();
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * a21 * f0[i];
    rhs_(tmp_, k2_);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * (a31 * f0[i] + a32 * k2_[i]);
    rhs_(tmp_, k3_);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = y[i] + h * (a41 * f0[i] + a42 * k2_[i] + a43 * k3_[i]);
    rhs_(tmp_, k4_);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = y[i] + h * (a51 * f0[i] + a52 * k2_[i] + a53 * k3_[i] + a54 * k4_[i]);
    rhs_(tmp_, k5_);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = y[i] + h * (a61 * f0[i] + a62 * k2_[i] + a63 * k3_[i] + a64 * k4_[i] + a65 * k5_[i]);
    rhs_(tmp_, k6_);
    for (std::size_t i = 0; i < n; ++i)
      y_new[i] = y[i] + h * (b1 * f0[i] + b3 * k3_[i] + b4 * k4_[i] + b5 * k5_[i] + b6 * k6_[i]);
    rhs_(y_new, f_new);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double err = h * (e1 * f0[i] + e3 * k3_[i] + e4 * k4_[i] + e5 * k5_[i] + e6 * k6_[i] + e7 * f_new[i]);
      double scale = sc.atol + sc.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
      acc += (err / scale) * (err / scale);
    }
    return std::sqrt(acc / double(n));
  }

  // Initial step heuristic (Hairer, Nørsett & Wanner, II.4).
  double initial_step(const std::vector<double>& y, const std::vector<double>& f0, const StepControl& sc) {
    const std::size_t n = y.size();
    double d0 = 0, d1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = sc.atol + sc.rtol * std::abs(y[i]);
      d0 += (y[i] / s) * (y[i] / s);
      d1 += (f0[i] / s) * (f0[i] / s);
    }
    d0 = std::sqrt(d0 / n);
    d1 = std::sqrt(d1 / n);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, sc.max_step);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h0 * f0[i];
    rhs_(tmp_, k2_);
    double d2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = sc.atol + sc.rtol * std::abs(y[i]);
      d2 += ((k2_[i] - f0[i]) / s) * ((k2_[i] - f0[i]) / s);
    }
    d2 = std::sqrt(d2 / n) / h0;
    double h1 = (d1 <= 1e-15 && d2 <= 1e-15) ? std::max(1e-6, h0 * 1e-3)
                                             : std::pow(0.01 / std::max(d1, d2), 1.0 / 5);
    return std::min({100 * h0, h1, sc.max_step});
  }

  void eval(const std::vector<double>& y, std::vector<double>& f) { rhs_(y, f); }

 private:
  Rhs rhs_;
  std::vector<double> k2_, k3_, k4_, k5_, k6_, tmp_;
};

inline double next_step_factor(double err, const StepControl& sc) {
  if (err == 0.0) return sc.max_factor;
  return std::clamp(sc.safety * std::pow(err, -0.2), sc.min_factor, sc.max_factor);
}

}  // namespace qlmf
