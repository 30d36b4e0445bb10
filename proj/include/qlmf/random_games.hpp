#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qlmf/core/errors.hpp"
#include "qlmf/core/seeding.hpp"

namespace qlmf {

inline constexpr double kDefaultElementBudget = 1e8;

struct GameParams {
  int p = 2;
  int n = 2;
  double gamma = 0.0;
  std::uint64_t seed = 0;

  double gamma_hat() const { return gamma / (p - 1); }
  // Zero-sum (Γ = −1) or identical-payoff (Γ = p−1) ensemble.
  bool at_endpoint() const { return gamma == -1.0 || gamma == double(p - 1); }

  void validate() const {
    if (p < 2) throw ParameterError("p must be >= 2");
    if (n < 2) throw ParameterError("n must be >= 2");
    if (!(gamma >= -1.0 && gamma <= p - 1.0))
      throw ParameterError("gamma must lie in [-1, p-1]");
  }
};

inline std::size_t ipow(std::size_t base, int e) {
  std::size_t r = 1;
  while (e-- > 0) r *= base;
  return r;
}

inline double element_count(int p, int n) { return p * std::pow(double(n), p); }

// Payoffs stored player-major: values[i * N^p + idx(a)], idx row-major over
// (a_1, ..., a_p) so the last player's action has stride 1.
struct PayoffTensor {
  GameParams params;
  std::vector<double> values;

  int p() const { return params.p; }
  int n() const { return params.n; }
  std::size_t profiles() const { return ipow(params.n, params.p); }
  const double* slice(int i) const { return values.data() + std::size_t(i) * profiles(); }
  double* slice(int i) { return values.data() + std::size_t(i) * profiles(); }

  std::size_t index(const std::vector<int>& a) const {
    std::size_t idx = 0;
    for (int v : a) idx = idx * params.n + v;
    return idx;
  }
  double at(int i, const std::vector<int>& a) const { return slice(i)[index(a)]; }

  static PayoffTensor zeros(int p, int n) {
    PayoffTensor t;
    t.params = {p, n, 0.0, 0};
    t.values.assign(std::size_t(p) * t.profiles(), 0.0);
    return t;
  }
};

// Σ_ii = 1, Σ_ij = Γ/(p−1).
inline Eigen::MatrixXd build_covariance(int p, double gamma) {
  GameParams{p, 2, gamma, 0}.validate();
  double rho = gamma / (p - 1);
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(p, p, rho);
  s.diagonal().setOnes();
  return s;
}

// Symmetric square root of (1−ρ)I + ρ11ᵀ: √(1−ρ) I + c 11ᵀ.
inline Eigen::MatrixXd covariance_sqrt(int p, double gamma) {
  GameParams{p, 2, gamma, 0}.validate();
  double rho = gamma / (p - 1);
  double alpha = std::sqrt(std::max(0.0, 1.0 - rho));
  double top = std::sqrt(std::max(0.0, 1.0 + (p - 1) * rho));
  double c = (top - alpha) / p;
  Eigen::MatrixXd l = Eigen::MatrixXd::Constant(p, p, c);
  l.diagonal().array() += alpha;
  return l;
}

inline PayoffTensor sample_payoffs(const GameParams& params,
                                   double budget_elements = kDefaultElementBudget) {
  params.validate();
  if (element_count(params.p, params.n) > budget_elements)
    throw ResourceLimitError("payoff tensor of " + std::to_string(element_count(params.p, params.n)) +
                             " elements exceeds budget " + std::to_string(budget_elements));
  const int p = params.p;
  Eigen::MatrixXd l = covariance_sqrt(p, params.gamma);
  PayoffTensor t;
  t.params = params;
  const std::size_t m = t.profiles();
  t.values.resize(std::size_t(p) * m);

  std::mt19937_64 rng(derive_seed(params.seed, "payoffs"));
  std::normal_distribution<double> normal;
  std::vector<double> z(p);
  for (std::size_t k = 0; k < m; ++k) {
    for (auto& v : z) v = normal(rng);
    for (int i = 0; i < p; ++i) {
      double s = 0.0;
      for (int j = 0; j < p; ++j) s += l(i, j) * z[j];
      t.values[std::size_t(i) * m + k] = s;
    }
  }
  return t;
}

// Sample covariance (n−1 denominator) of the p-vectors over all profiles.
inline Eigen::MatrixXd empirical_covariance(const PayoffTensor& t) {
  const int p = t.p();
  const std::size_t m = t.profiles();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> v(
      t.values.data(), p, Eigen::Index(m));
  Eigen::MatrixXd centered = v.colwise() - v.rowwise().mean();
  return centered * centered.transpose() / double(m - 1);
}

// Binary dump: 32-byte header then little-endian f64 values.
//   "QRET" | u32 version | u32 p | u32 n | f64 gamma | u64 seed
inline constexpr std::uint32_t kTensorDumpVersion = 1;

inline void write_tensor(const std::string& path, const PayoffTensor& t) {
  static_assert(std::endian::native == std::endian::little, "dump format assumes little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path);
  char header[32];
  std::memcpy(header, "QRET", 4);
  std::uint32_t u32[3] = {kTensorDumpVersion, std::uint32_t(t.p()), std::uint32_t(t.n())};
  std::memcpy(header + 4, u32, 12);
  std::memcpy(header + 16, &t.params.gamma, 8);
  std::memcpy(header + 24, &t.params.seed, 8);
  out.write(header, 32);
  out.write(reinterpret_cast<const char*>(t.values.data()),
            std::streamsize(t.values.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
}

inline PayoffTensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char header[32];
  if (!in.read(header, 32) || std::memcmp(header, "QRET", 4) != 0)
    throw IoError("not a tensor dump: " + path);
  std::uint32_t u32[3];
  std::memcpy(u32, header + 4, 12);
  if (u32[0] != kTensorDumpVersion) throw IoError("unsupported dump version");
  PayoffTensor t;
  t.params.p = int(u32[1]);
  t.params.n = int(u32[2]);
  std::memcpy(&t.params.gamma, header + 16, 8);
  std::memcpy(&t.params.seed, header + 24, 8);
  t.values.resize(std::size_t(t.p()) * t.profiles());
  if (!in.read(reinterpret_cast<char*>(t.values.data()),
               std::streamsize(t.values.size() * sizeof(double))))
    throw IoError("truncated dump: " + path);
  return t;
}

}  // namespace qlmf
