#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qlmf {

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ResourceLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericDomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Adaptive integration gave up; `state` is the last accepted point.
struct IntegrationError : std::runtime_error {
  IntegrationError(const std::string& what, double t_, std::vector<double> state_)
      : std::runtime_error(what), t(t_), state(std::move(state_)) {}
  double t;
  std::vector<double> state;
};

// Newton or continuation failure. Carries the best iterate (ln K, a, ln b)
// and the residual it reached.
struct SolverError : std::runtime_error {
  SolverError(const std::string& what, double t_, std::vector<double> best_, double residual_)
      : std::runtime_error(what), t(t_), best(std::move(best_)), residual(residual_) {}
  double t;
  std::vector<double> best;
  double residual;
};

struct BracketError : std::runtime_error {
  BracketError(const std::string& what, std::vector<double> ts_, std::vector<double> margins_)
      : std::runtime_error(what), ts(std::move(ts_)), margins(std::move(margins_)) {}
  std::vector<double> ts;
  std::vector<double> margins;
};

}  // namespace qlmf
