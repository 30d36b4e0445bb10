#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qlmf/core/errors.hpp"
#include "qlmf/core/parallel.hpp"
#include "qlmf/core/seeding.hpp"
#include "qlmf/dopri5.hpp"
#include "qlmf/random_games.hpp"

namespace qlmf {

inline constexpr double kLogFloor = 1e-300;

// p strategies of length n, stored contiguously player by player.
struct StrategyProfile {
  int p = 0;
  int n = 0;
  std::vector<double> x;

  StrategyProfile() = default;
  StrategyProfile(int p_, int n_) : p(p_), n(n_), x(std::size_t(p_) * n_, 0.0) {}

  static StrategyProfile uniform(int p, int n) {
    StrategyProfile s(p, n);
    std::fill(s.x.begin(), s.x.end(), 1.0 / n);
    return s;
  }

  std::span<double> player(int i) { return {x.data() + std::size_t(i) * n, std::size_t(n)}; }
  std::span<const double> player(int i) const { return {x.data() + std::size_t(i) * n, std::size_t(n)}; }

  // Largest |Σ_a x_a − 1| over players; negative entries report +inf.
  double simplex_defect() const {
    double worst = 0.0;
    for (int i = 0; i < p; ++i) {
      double s = 0.0;
      for (double v : player(i)) {
        if (!(v >= 0.0)) return INFINITY;
        s += v;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  void renormalize() {
    for (int i = 0; i < p; ++i) {
      auto v = player(i);
      double s = 0.0;
      for (double e : v) s += e;
      for (double& e : v) e /= s;
    }
  }
};

inline double effective_temperature(double t_scaled, int n, int p) {
  if (!(t_scaled > 0)) throw ParameterError("T must be positive");
  return t_scaled / std::sqrt(std::pow(double(n), p - 1));
}

// Contracts payoff slices against the product distribution of the other
// players. Holds scratch buffers, so one instance per thread.
class RewardEvaluator {
 public:
  explicit RewardEvaluator(const PayoffTensor& t)
      : t_(&t), buf_a_(t.profiles() / t.n()), buf_b_(t.profiles() / t.n()) {}

  // out[a] = Σ_{a_{-i}} Π_i(a, a_{-i}) Π_{j≠i} x^j_{a_j}, with x laid out as in StrategyProfile.
  void rewards(const double* x, int i, double* out) {
    const int p = t_->p();
    const std::size_t n = t_->n();
    const double* src = t_->slice(i);
    std::size_t len = t_->profiles();
    double* dst = buf_a_.data();
    // Trailing axes p−1 .. i+1: (rows, n) · x_j.
    for (int j = p - 1; j > i; --j) {
      const double* xj = x + std::size_t(j) * n;
      std::size_t rows = len / n;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = src + r * n;
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += row[c] * xj[c];
        dst[r] = s;
      }
      len = rows;
      src = dst;
      dst = (dst == buf_a_.data()) ? buf_b_.data() : buf_a_.data();
    }
    // Leading axes 0 .. i−1: x_j · (n, cols).
    for (int j = 0; j < i; ++j) {
      const double* xj = x + std::size_t(j) * n;
      std::size_t cols = len / n;
      double* target = (j == i - 1) ? out : dst;
      std::fill(target, target + cols, 0.0);
      for (std::size_t c = 0; c < n; ++c) {
        const double w = xj[c];
        const double* row = src + c * cols;
        for (std::size_t r = 0; r < cols; ++r) target[r] += w * row[r];
      }
      len = cols;
      src = target;
      dst = (dst == buf_a_.data()) ? buf_b_.data() : buf_a_.data();
    }
    if (i == 0) std::copy(src, src + n, out);
  }

  // ẋ = x ⊙ (R − T ln x − ρ), ρ = ⟨x, R − T ln x⟩, for all players.
  void rhs(const double* x, double t_eff, double* dx) {
    const int p = t_->p();
    const std::size_t n = t_->n();
    for (int i = 0; i < p; ++i) {
      const double* xi = x + std::size_t(i) * n;
      double* di = dx + std::size_t(i) * n;
      rewards(x, i, di);
      double rho = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        di[a] -= t_eff * std::log(std::max(xi[a], kLogFloor));
        rho += xi[a] * di[a];
      }
      for (std::size_t a = 0; a < n; ++a) di[a] = xi[a] * (di[a] - rho);
    }
  }

 private:
  const PayoffTensor* t_;
  std::vector<double> buf_a_, buf_b_;
};

inline std::vector<double> expected_rewards(const PayoffTensor& t, const StrategyProfile& s, int i) {
  RewardEvaluator ev(t);
  std::vector<double> out(t.n());
  ev.rewards(s.x.data(), i, out.data());
  return out;
}

inline std::vector<double> ql_rhs(const StrategyProfile& s, const PayoffTensor& t, double t_eff) {
  RewardEvaluator ev(t);
  std::vector<double> out(s.x.size());
  ev.rhs(s.x.data(), t_eff, out.data());
  return out;
}

inline double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

struct IntegratorOptions {
  double max_step = 0.5;
  double deriv_tol = 1e-8;
  double t_max = 5000.0;
  double rel_tol = 1e-6;
  double abs_tol = 1e-9;
  std::optional<double> record_every;

  void validate() const {
    if (!(max_step > 0 && deriv_tol > 0 && deriv_tol < 1 && t_max > 0 && rel_tol > 0 && abs_tol > 0))
      throw ParameterError("integrator options must be positive with deriv_tol < 1");
    if (record_every && !(*record_every > 0)) throw ParameterError("record_every must be positive");
  }
};

enum class TrajectoryStatus { FixedPoint, Timeout };

struct TrajectoryOutcome {
  StrategyProfile final;
  TrajectoryStatus status = TrajectoryStatus::Timeout;
  double t_end = 0.0;
  long steps = 0;
  long rejected = 0;
  double final_deriv = INFINITY;
  std::vector<std::pair<double, StrategyProfile>> path;
};

inline TrajectoryOutcome integrate(const StrategyProfile& start, const PayoffTensor& tensor, double t_eff,
                                   const IntegratorOptions& opts = {}) {
  opts.validate();
  if (start.p != tensor.p() || start.n != tensor.n()) throw ParameterError("profile/tensor shape mismatch");
  if (start.simplex_defect() > 1e-8) throw ParameterError("start is not on the simplex");

  RewardEvaluator ev(tensor);
  auto f = [&](const std::vector<double>& y, std::vector<double>& dy) { ev.rhs(y.data(), t_eff, dy.data()); };
  const std::size_t dim = start.x.size();
  Dopri5 stepper(f, dim);
  StepControl sc;
  sc.rtol = opts.rel_tol;
  sc.atol = opts.abs_tol;
  sc.max_step = opts.max_step;

  TrajectoryOutcome out;
  out.final = start;
  out.final.renormalize();
  std::vector<double>& y = out.final.x;
  std::vector<double> f0(dim), y_new(dim), f_new(dim);
  stepper.eval(y, f0);

  double t = 0.0;
  double next_record = 0.0;
  auto record = [&] {
    if (opts.record_every && t >= next_record) {
      out.path.emplace_back(t, out.final);
      while (next_record <= t) next_record += *opts.record_every;
    }
  };
  record();
  out.final_deriv = sup_norm(f0);
  if (out.final_deriv < opts.deriv_tol) {
    out.status = TrajectoryStatus::FixedPoint;
    return out;
  }

  double h = stepper.initial_step(y, f0, sc);
  while (t < opts.t_max) {
    h = std::min(h, opts.t_max - t);
    double err = stepper.trial(y, f0, h, sc, y_new, f_new);
    bool negative = std::any_of(y_new.begin(), y_new.end(), [](double v) { return !(v >= 0.0); });
    if (!(err <= 1.0) || negative) {
      ++out.rejected;
      h *= (negative || !std::isfinite(err)) ? 0.25 : std::max(sc.min_factor, sc.safety * std::pow(err, -0.2));
      if (h < sc.min_step) throw IntegrationError("step size underflow", t, y);
      continue;
    }
    t += h;
    ++out.steps;
    y.swap(y_new);
    out.final.renormalize();
    stepper.eval(y, f0);
    out.final_deriv = sup_norm(f0);
    record();
    if (out.final_deriv < opts.deriv_tol) {
      out.status = TrajectoryStatus::FixedPoint;
      break;
    }
    h = std::min(h * next_step_factor(err, sc), sc.max_step);
  }
  out.t_end = t;
  return out;
}

// Flat Dirichlet: normalized standard exponentials.
template <class Rng>
StrategyProfile sample_initial(Rng& rng, int p, int n) {
  StrategyProfile s(p, n);
  std::exponential_distribution<double> expo(1.0);
  for (int i = 0; i < p; ++i) {
    auto v = s.player(i);
    double sum = 0.0;
    for (double& e : v) sum += (e = expo(rng));
    for (double& e : v) e /= sum;
  }
  return s;
}

// ‖u − v‖ / ‖(u + v)/2‖ on concatenated profiles.
inline double relative_distance(const StrategyProfile& u, const StrategyProfile& v) {
  double d = 0.0, m = 0.0;
  for (std::size_t k = 0; k < u.x.size(); ++k) {
    double diff = u.x[k] - v.x[k];
    double mean = 0.5 * (u.x[k] + v.x[k]);
    d += diff * diff;
    m += mean * mean;
  }
  return std::sqrt(d) / std::sqrt(m);
}

enum class GameLabel { UniqueFixedPoint, MultipleFixedPoints, NonConverged };

inline const char* to_string(GameLabel l) {
  switch (l) {
    case GameLabel::UniqueFixedPoint: return "unique";
    case GameLabel::MultipleFixedPoints: return "multiple";
    case GameLabel::NonConverged: return "nonconverged";
  }
  return "?";
}

struct ClassifyOptions {
  int n_starts = 100;
  double dist_tol = 0.01;
  IntegratorOptions integrator;
  // Seed for the starting profiles; derived from the tensor seed when unset.
  std::optional<std::uint64_t> start_seed;
  unsigned threads = 1;
  bool keep_finals = false;
};

struct GameClassification {
  GameLabel label = GameLabel::NonConverged;
  int n_starts = 0;
  int n_converged = 0;
  int n_failed = 0;  // integration errors, counted as not converged
  double max_pairwise_reldist = 0.0;
  std::vector<StrategyProfile> finals;
};

inline StrategyProfile start_profile(std::uint64_t start_seed, int index, int p, int n) {
  std::mt19937_64 rng(derive_seed(start_seed, "start", {std::uint64_t(index)}));
  return sample_initial(rng, p, n);
}

inline GameClassification classify_game(const PayoffTensor& tensor, double t_scaled, const ClassifyOptions& opts = {}) {
  if (opts.n_starts < 2) throw ParameterError("n_starts must be >= 2");
  const double t_eff = effective_temperature(t_scaled, tensor.n(), tensor.p());
  const std::uint64_t seed = opts.start_seed.value_or(derive_seed(tensor.params.seed, "starts"));

  struct Slot {
    StrategyProfile final;
    bool converged = false;
    bool failed = false;
  };
  std::vector<Slot> slots(opts.n_starts);
  parallel_for(slots.size(), opts.threads, [&](std::size_t s) {
    StrategyProfile x0 = start_profile(seed, int(s), tensor.p(), tensor.n());
    try {
      TrajectoryOutcome o = integrate(x0, tensor, t_eff, opts.integrator);
      slots[s].converged = o.status == TrajectoryStatus::FixedPoint;
      slots[s].final = std::move(o.final);
    } catch (const IntegrationError&) {
      slots[s].failed = true;
    }
  });

  GameClassification c;
  c.n_starts = opts.n_starts;
  for (const auto& s : slots) {
    c.n_converged += s.converged;
    c.n_failed += s.failed;
  }
  if (c.n_converged < c.n_starts) {
    c.label = GameLabel::NonConverged;
  } else {
    for (std::size_t i = 0; i < slots.size(); ++i)
      for (std::size_t j = i + 1; j < slots.size(); ++j)
        c.max_pairwise_reldist = std::max(c.max_pairwise_reldist, relative_distance(slots[i].final, slots[j].final));
    c.label = c.max_pairwise_reldist < opts.dist_tol ? GameLabel::UniqueFixedPoint : GameLabel::MultipleFixedPoints;
  }
  if (opts.keep_finals)
    for (auto& s : slots) c.finals.push_back(std::move(s.final));
  return c;
}

// Discrete Q-learning state; the induced strategy is softmax(β q) per player.
struct QState {
  int p = 0;
  int n = 0;
  std::vector<double> q;
  double alpha = 0.1;
  double beta = 0.1;

  StrategyProfile strategy() const {
    StrategyProfile s(p, n);
    for (int i = 0; i < p; ++i) {
      const double* qi = q.data() + std::size_t(i) * n;
      double m = *std::max_element(qi, qi + n);
      double z = 0.0;
      for (int a = 0; a < n; ++a) z += (s.x[std::size_t(i) * n + a] = std::exp(beta * (qi[a] - m)));
      for (int a = 0; a < n; ++a) s.x[std::size_t(i) * n + a] /= z;
    }
    return s;
  }

  // Q-values whose softmax reproduces `s`.
  static QState from_profile(const StrategyProfile& s, double alpha, double beta) {
    QState st{s.p, s.n, std::vector<double>(s.x.size()), alpha, beta};
    for (std::size_t k = 0; k < s.x.size(); ++k) st.q[k] = std::log(std::max(s.x[k], kLogFloor)) / beta;
    return st;
  }
};

// Q ← (1 − α) Q + R(x(Q)); one step advances the continuous clock by β.
inline QState discrete_step(const QState& state, const PayoffTensor& tensor, double t_eff_check) {
  if (!(state.alpha > 0 && state.alpha < 1 && state.beta > 0)) throw ParameterError("need alpha in (0,1), beta > 0");
  if (std::abs(state.alpha / state.beta - t_eff_check) > 1e-9 * std::max(1.0, t_eff_check))
    throw ParameterError("alpha/beta does not match the exploration rate");
  StrategyProfile x = state.strategy();
  RewardEvaluator ev(tensor);
  QState next = state;
  std::vector<double> r(state.n);
  for (int i = 0; i < state.p; ++i) {
    ev.rewards(x.x.data(), i, r.data());
    for (int a = 0; a < state.n; ++a) {
      double& qa = next.q[std::size_t(i) * state.n + a];
      qa = (1.0 - state.alpha) * qa + r[a];
    }
  }
  return next;
}

// Rows (t, player, action, probability).
inline void write_trajectory_csv(const std::string& path, const std::vector<std::pair<double, StrategyProfile>>& path_samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path);
  out << "t,player,action,probability\n" << std::setprecision(17);
  for (const auto& [t, s] : path_samples)
    for (int i = 0; i < s.p; ++i)
      for (int a = 0; a < s.n; ++a) out << t << ',' << i << ',' << a << ',' << s.x[std::size_t(i) * s.n + a] << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace qlmf
