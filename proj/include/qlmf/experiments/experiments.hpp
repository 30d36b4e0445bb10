#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "qlmf/core/errors.hpp"
#include "qlmf/core/parallel.hpp"
#include "qlmf/core/seeding.hpp"
#include "qlmf/dmft/fixed_point.hpp"
#include "qlmf/dmft/stability.hpp"
#include "qlmf/dynamics.hpp"
#include "qlmf/experiments/io.hpp"
#include "qlmf/random_games.hpp"

namespace qlmf {

inline std::vector<double> default_gamma_hat_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

inline std::vector<double> default_t_grid() {
  std::vector<double> t;
  for (int i = 1; i <= 24; ++i) t.push_back(0.25 * i);
  return t;
}

struct SweepConfig {
  std::vector<std::pair<int, int>> pairs = {{2, 50}, {3, 12}, {5, 4}};
  std::vector<double> gamma_grid = default_gamma_hat_grid();  // Γ̂ values
  std::vector<double> t_grid = default_t_grid();
  int games_per_cell = 40;
  int starts_per_game = 100;
  double dist_tol = 0.01;
  std::uint64_t master_seed = 0;
  IntegratorOptions integrator;
  std::string out_dir = "out";
  unsigned threads = 0;
  double budget_elements = kDefaultElementBudget;

  void validate() const {
    if (pairs.empty() || gamma_grid.empty() || t_grid.empty()) throw ConfigError("sweep grids must be non-empty");
    if (!std::is_sorted(gamma_grid.begin(), gamma_grid.end()) || !std::is_sorted(t_grid.begin(), t_grid.end()))
      throw ConfigError("sweep grids must be sorted ascending");
    if (games_per_cell < 1) throw ConfigError("games_per_cell must be >= 1");
    if (starts_per_game < 2) throw ConfigError("starts_per_game must be >= 2");
    for (double t : t_grid)
      if (!(t > 0)) throw ConfigError("temperatures must be positive");
    for (auto [p, n] : pairs) {
      if (p < 2 || n < 2) throw ConfigError("pairs need p >= 2 and n >= 2");
      for (double gh : gamma_grid)
        if (!(gh * (p - 1) >= -1.0 && gh <= 1.0)) throw ConfigError("gamma_hat outside [-1/(p-1), 1]");
      if (element_count(p, n) > budget_elements)
        throw ConfigError("pair " + std::to_string(p) + "x" + std::to_string(n) + " exceeds the element budget");
    }
    integrator.validate();
  }
};

struct CellResult {
  int p = 0;
  int n = 0;
  double gamma_hat = 0.0;
  double gamma = 0.0;
  double t = 0.0;
  int games = 0;
  int n_unique = 0;
  int n_multiple = 0;
  int n_nonconverged = 0;
  int n_failed = 0;  // integration failures, included in n_nonconverged
  double fraction_unique = 0.0;
  double wall_time = 0.0;
};

inline const std::vector<std::string>& sweep_csv_columns() {
  static const std::vector<std::string> cols = {"p", "n", "gamma_hat", "gamma", "t", "games", "n_unique",
                                                "n_multiple", "n_nonconverged", "n_failed", "fraction_unique"};
  return cols;
}

inline std::string sweep_csv_row(const CellResult& c) {
  return csv_row({std::to_string(c.p), std::to_string(c.n), fmt_double(c.gamma_hat), fmt_double(c.gamma),
                  fmt_double(c.t), std::to_string(c.games), std::to_string(c.n_unique), std::to_string(c.n_multiple),
                  std::to_string(c.n_nonconverged), std::to_string(c.n_failed), fmt_double(c.fraction_unique)});
}

inline std::uint64_t game_seed(std::uint64_t master, int p, int n, std::size_t gi, std::size_t ti, int game) {
  return derive_seed(master, "game", {std::uint64_t(p), std::uint64_t(n), gi, ti, std::uint64_t(game)});
}

// Classifies `games` independent games of one cell; games run in parallel.
inline CellResult run_cell(int p, int n, double gamma_hat, double t, std::size_t gi, std::size_t ti,
                           const SweepConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  CellResult c;
  c.p = p;
  c.n = n;
  c.gamma_hat = gamma_hat;
  c.gamma = gamma_hat * (p - 1);
  c.t = t;
  c.games = cfg.games_per_cell;
  std::vector<GameClassification> results(cfg.games_per_cell);
  parallel_for(results.size(), cfg.threads, [&](std::size_t g) {
    GameParams gp{p, n, c.gamma, game_seed(cfg.master_seed, p, n, gi, ti, int(g))};
    PayoffTensor tensor = sample_payoffs(gp, cfg.budget_elements);
    ClassifyOptions co;
    co.n_starts = cfg.starts_per_game;
    co.dist_tol = cfg.dist_tol;
    co.integrator = cfg.integrator;
    results[g] = classify_game(tensor, t, co);
  });
  for (const auto& r : results) {
    c.n_unique += r.label == GameLabel::UniqueFixedPoint;
    c.n_multiple += r.label == GameLabel::MultipleFixedPoints;
    c.n_nonconverged += r.label == GameLabel::NonConverged;
    c.n_failed += r.n_failed > 0;
  }
  c.fraction_unique = double(c.n_unique) / c.games;
  c.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

inline nlohmann::json integrator_json(const IntegratorOptions& o) {
  return {{"method", "dormand-prince-5(4)"}, {"max_step", o.max_step}, {"deriv_tol", o.deriv_tol},
          {"t_max", o.t_max},                {"rel_tol", o.rel_tol},   {"abs_tol", o.abs_tol}};
}

inline nlohmann::json sweep_config_json(const SweepConfig& c) {
  nlohmann::json pairs = nlohmann::json::array();
  for (auto [p, n] : c.pairs) pairs.push_back({p, n});
  return {{"pairs", pairs},
          {"gamma_hat_grid", c.gamma_grid},
          {"t_grid", c.t_grid},
          {"games_per_cell", c.games_per_cell},
          {"starts_per_game", c.starts_per_game},
          {"dist_tol", c.dist_tol},
          {"master_seed", c.master_seed},
          {"integrator", integrator_json(c.integrator)},
          {"budget_elements", c.budget_elements},
          {"initial_condition_law", "flat-dirichlet"},
          {"distance_metric", "pairwise-max euclidean / mean-of-pair norm"},
          {"temperature_scaling", "T_eff = T / sqrt(N^(p-1))"}};
}

struct SweepOutput {
  std::vector<CellResult> cells;
  int resumed = 0;  // cells taken from the journal
  std::string csv_path;
  std::string manifest_path;
};

namespace detail {

inline std::string cell_key(int p, int n, std::size_t gi, std::size_t ti) {
  return std::to_string(p) + "x" + std::to_string(n) + ":" + std::to_string(gi) + ":" + std::to_string(ti);
}

}  // namespace detail

// Journal lines are `key|csv-row|wall_time`. A line is complete only once its
// newline has been written, so a truncated tail is ignored on restart.
//
// `stop_after` limits the number of newly computed cells (for interruption
// tests); the CSV and manifest are written only when every cell is done.
inline SweepOutput run_sweep(const SweepConfig& cfg, std::optional<int> stop_after = std::nullopt) {
  cfg.validate();
  ensure_dir(cfg.out_dir);
  namespace fs = std::filesystem;
  const std::string journal_path = (fs::path(cfg.out_dir) / "sweep.journal").string();
  SweepOutput out;
  out.csv_path = (fs::path(cfg.out_dir) / "sweep.csv").string();
  out.manifest_path = (fs::path(cfg.out_dir) / "sweep_manifest.json").string();
  const std::string started = utc_timestamp();

  std::map<std::string, std::pair<std::string, double>> done;
  {
    std::ifstream in(journal_path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    while (true) {
      auto nl = content.find('\n', pos);
      if (nl == std::string::npos) break;
      std::string line = content.substr(pos, nl - pos);
      pos = nl + 1;
      auto a = line.find('|'), b = line.rfind('|');
      if (a == std::string::npos || a == b) continue;
      done[line.substr(0, a)] = {line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))};
    }
    // Drop any partial trailing record.
    if (pos != content.size()) {
      std::ofstream rewrite(journal_path, std::ios::binary | std::ios::trunc);
      rewrite << content.substr(0, pos);
      if (!rewrite) throw IoError("cannot repair journal " + journal_path);
    }
  }

  std::ofstream journal(journal_path, std::ios::binary | std::ios::app);
  if (!journal) throw IoError("cannot open journal " + journal_path);

  std::vector<std::string> rows;
  std::vector<double> wall_times;
  int computed = 0;
  bool complete = true;
  for (auto [p, n] : cfg.pairs) {
    for (std::size_t gi = 0; gi < cfg.gamma_grid.size(); ++gi) {
      for (std::size_t ti = 0; ti < cfg.t_grid.size(); ++ti) {
        const std::string key = detail::cell_key(p, n, gi, ti);
        if (auto it = done.find(key); it != done.end()) {
          rows.push_back(it->second.first);
          wall_times.push_back(it->second.second);
          ++out.resumed;
          continue;
        }
        if (stop_after && computed >= *stop_after) {
          complete = false;
          continue;
        }
        CellResult c = run_cell(p, n, cfg.gamma_grid[gi], cfg.t_grid[ti], gi, ti, cfg);
        std::string row = sweep_csv_row(c);
        journal << key << '|' << row << '|' << fmt_double(c.wall_time) << '\n';
        journal.flush();
        if (!journal) throw IoError("journal write failed: " + journal_path);
        rows.push_back(row);
        wall_times.push_back(c.wall_time);
        out.cells.push_back(c);
        ++computed;
      }
    }
  }
  if (!complete) return out;

  std::string body = csv_row(sweep_csv_columns()) + "\n";
  for (const auto& r : rows) body += r + "\n";
  write_text(out.csv_path, body);

  nlohmann::json endpoints = nlohmann::json::array();
  for (auto [p, n] : cfg.pairs)
    for (double gh : cfg.gamma_grid) {
      double g = gh * (p - 1);
      if (g == -1.0 || g == double(p - 1)) endpoints.push_back({{"p", p}, {"n", n}, {"gamma", g}});
    }
  nlohmann::json manifest = {{"kind", "sweep"},
                             {"code_version", kCodeVersion},
                             {"config", sweep_config_json(cfg)},
                             {"csv", "sweep.csv"},
                             {"csv_columns", sweep_csv_columns()},
                             {"endpoint_gamma_cells", endpoints},
                             {"cells_resumed", out.resumed},
                             {"cell_wall_times", wall_times},
                             {"started_utc", started},
                             {"finished_utc", utc_timestamp()}};
  write_text(out.manifest_path, manifest.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Extinction CDF runs.

struct CdfOptions {
  IntegratorOptions integrator;
  unsigned threads = 0;
  double budget_elements = kDefaultElementBudget;
  bool zero_payoffs = false;
};

struct CdfRunResult {
  int p = 0;
  int n = 0;
  double gamma = 0.0;
  double t = 0.0;
  std::vector<double> samples;  // sorted N·x over converged games
  int n_games = 0;
  int n_excluded = 0;  // games that did not reach a fixed point
  double theoretical_extinction = NAN;
  std::vector<std::string> warnings;
};

// Theoretical extinction rate at (p, Γ, T); NaN when no solution is found.
inline double dmft_extinction(int p, double gamma, double t) {
  SolverParams sp;
  sp.p = p;
  sp.gamma = gamma;
  sp.t = t;
  try {
    return extinction_rate(solve_dmft(sp));
  } catch (const SolverError&) {
    return NAN;
  }
}

inline std::vector<CdfRunResult> run_cdf(int p, const std::vector<int>& n_list, double gamma, double t,
                                         int games_per_size, std::uint64_t master_seed, const CdfOptions& opt = {}) {
  if (n_list.empty() || games_per_size < 1) throw ConfigError("cdf needs sizes and games_per_size >= 1");
  const double theory = dmft_extinction(p, gamma, t);
  std::optional<double> t_crit;
  try {
    t_crit = critical_temperature(gamma, p);
  } catch (const std::runtime_error&) {
  }
  std::vector<CdfRunResult> out;
  for (int n : n_list) {
    CdfRunResult r;
    r.p = p;
    r.n = n;
    r.gamma = gamma;
    r.t = t;
    r.n_games = games_per_size;
    r.theoretical_extinction = theory;
    if (t_crit && t <= *t_crit)
      r.warnings.push_back("T=" + fmt_double(t) + " is not above T_crit=" + fmt_double(*t_crit));
    const double t_eff = effective_temperature(t, n, p);
    std::vector<std::optional<std::vector<double>>> finals(games_per_size);
    parallel_for(finals.size(), opt.threads, [&](std::size_t g) {
      std::uint64_t seed = derive_seed(master_seed, "cdf", {std::uint64_t(p), std::uint64_t(n), g});
      PayoffTensor tensor = opt.zero_payoffs ? PayoffTensor::zeros(p, n)
                                             : sample_payoffs(GameParams{p, n, gamma, seed}, opt.budget_elements);
      StrategyProfile x0 = start_profile(derive_seed(seed, "starts"), 0, p, n);
      try {
        TrajectoryOutcome o = integrate(x0, tensor, t_eff, opt.integrator);
        if (o.status == TrajectoryStatus::FixedPoint) finals[g] = o.final.x;
      } catch (const IntegrationError&) {
      }
    });
    for (const auto& f : finals) {
      if (!f) {
        ++r.n_excluded;
        continue;
      }
      for (double v : *f) r.samples.push_back(v * n);
    }
    std::sort(r.samples.begin(), r.samples.end());
    out.push_back(std::move(r));
  }
  return out;
}

inline double mass_below(const CdfRunResult& r, double threshold) {
  if (r.samples.empty()) return NAN;
  auto it = std::lower_bound(r.samples.begin(), r.samples.end(), threshold);
  return double(it - r.samples.begin()) / r.samples.size();
}

inline void write_cdf_csv(const std::string& out_dir, const std::vector<CdfRunResult>& runs) {
  ensure_dir(out_dir);
  namespace fs = std::filesystem;
  std::string samples = "p,n,gamma,t,index,value,ecdf\n";
  std::string summary = "p,n,gamma,t,n_games,n_excluded,n_samples,theoretical_extinction,mass_below_1e-3\n";
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < r.samples.size(); ++i)
      samples += csv_row({std::to_string(r.p), std::to_string(r.n), fmt_double(r.gamma), fmt_double(r.t),
                          std::to_string(i), fmt_double(r.samples[i]), fmt_double(double(i + 1) / r.samples.size())}) +
                 "\n";
    summary += csv_row({std::to_string(r.p), std::to_string(r.n), fmt_double(r.gamma), fmt_double(r.t),
                        std::to_string(r.n_games), std::to_string(r.n_excluded), std::to_string(r.samples.size()),
                        fmt_double(r.theoretical_extinction), fmt_double(mass_below(r, 1e-3))}) +
               "\n";
  }
  write_text((fs::path(out_dir) / "cdf_samples.csv").string(), samples);
  write_text((fs::path(out_dir) / "cdf_summary.csv").string(), summary);
}

// ---------------------------------------------------------------------------
// Stability boundary and extinction maps.

struct BoundaryRow {
  int p = 0;
  double gamma_hat = 0.0;
  std::optional<double> t_crit;
  double t_crit_large_p = 0.0;
  std::string status = "ok";
};

inline std::vector<BoundaryRow> run_boundary(int p, const std::vector<double>& gamma_hat_grid, double tol = 1e-3,
                                             unsigned threads = 1) {
  for (double gh : gamma_hat_grid)
    if (!(gh >= 0.0 && gh <= 1.0)) throw ConfigError("boundary grid must lie in [0, 1]");
  std::vector<BoundaryRow> rows(gamma_hat_grid.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    BoundaryRow& r = rows[i];
    r.p = p;
    r.gamma_hat = gamma_hat_grid[i];
    r.t_crit_large_p = tcrit_large_p(r.gamma_hat, p);
    try {
      r.t_crit = critical_temperature(r.gamma_hat * (p - 1), p, tol);
    } catch (const BracketError&) {
      r.status = "bracket_failure";
    } catch (const SolverError&) {
      r.status = "solver_failure";
    }
  });
  return rows;
}

inline std::string boundary_csv(const std::vector<BoundaryRow>& rows) {
  std::string s = "p,gamma_hat,t_crit,t_crit_large_p,t_crit_rescaled,status\n";
  for (const auto& r : rows) {
    double scale = std::sqrt(std::numbers::e * (r.p - 1));
    s += csv_row({std::to_string(r.p), fmt_double(r.gamma_hat), r.t_crit ? fmt_double(*r.t_crit) : "",
                  fmt_double(r.t_crit_large_p), r.t_crit ? fmt_double(*r.t_crit / scale) : "", r.status}) +
         "\n";
  }
  return s;
}

struct ExtinctionCell {
  int p = 0;
  double gamma_hat = 0.0;
  double t = 0.0;
  std::optional<double> t_crit;
  std::string status = "ok";  // ok | masked | failed
  double extinction = NAN;
  double margin = NAN;
  double q = NAN;
  double z_crit = NAN;
};

// Theoretical extinction over a (Γ̂, T) grid. Cells at or below T_crit, or
// whose solve fails, are masked; their margin is kept when available.
inline std::vector<ExtinctionCell> run_extinction_map(int p, const std::vector<double>& gamma_hat_grid,
                                                      const std::vector<double>& t_grid, unsigned threads = 1) {
  std::vector<std::vector<ExtinctionCell>> rows(gamma_hat_grid.size());
  parallel_for(rows.size(), threads, [&](std::size_t gi) {
    const double gh = gamma_hat_grid[gi];
    const double gamma = gh * (p - 1);
    std::optional<double> t_crit;
    try {
      t_crit = critical_temperature(gamma, p);
    } catch (const std::runtime_error&) {
    }
    std::vector<double> ts = t_grid;
    std::sort(ts.begin(), ts.end(), std::greater<>());
    std::optional<FixedPointSolution> warm;
    std::map<double, ExtinctionCell> by_t;
    for (double t : ts) {
      ExtinctionCell c;
      c.p = p;
      c.gamma_hat = gh;
      c.t = t;
      c.t_crit = t_crit;
      SolverParams sp;
      sp.p = p;
      sp.gamma = gamma;
      sp.t = t;
      try {
        FixedPointSolution s = gamma == 0.0 ? gamma_zero_solve(sp) : solve_fixed_point(sp, warm ? &*warm : nullptr);
        if (gamma != 0.0) warm = s;
        c.margin = stability_check(s, sp).margin;
        c.q = s.q;
        c.z_crit = s.z_crit;
        c.extinction = extinction_rate(s);
      } catch (const SolverError&) {
        c.status = "failed";
      }
      if (c.status == "ok" && (!t_crit || t <= *t_crit)) {
        c.status = "masked";
        c.extinction = NAN;
      }
      by_t[t] = c;
    }
    for (double t : t_grid) rows[gi].push_back(by_t[t]);
  });
  std::vector<ExtinctionCell> out;
  for (auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

inline std::string extinction_map_csv(const std::vector<ExtinctionCell>& cells) {
  std::string s = "p,gamma_hat,t,t_crit,status,extinction,margin,q,z_crit\n";
  for (const auto& c : cells)
    s += csv_row({std::to_string(c.p), fmt_double(c.gamma_hat), fmt_double(c.t),
                  c.t_crit ? fmt_double(*c.t_crit) : "", c.status, c.status == "ok" ? fmt_double(c.extinction) : "",
                  fmt_double(c.margin), fmt_double(c.q), fmt_double(c.z_crit)}) +
         "\n";
  return s;
}

}  // namespace qlmf
