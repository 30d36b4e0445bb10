#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qlmf/qlmf.hpp"

namespace qlmf::cli {
namespace {

namespace fs = std::filesystem;

struct Context {
  KeyValueConfig cfg = KeyValueConfig::empty();
  std::string out_dir() const { return cfg.str("out_dir").value_or("out"); }
  std::uint64_t seed() const { return cfg.unsigned64("seed").value_or(0); }
  unsigned threads() const { return unsigned(cfg.integer("threads").value_or(0)); }
  double budget() const { return cfg.real("budget_elements").value_or(kDefaultElementBudget); }

  template <class T>
  T need(const std::optional<T>& v, const std::string& key) const {
    if (!v) throw ConfigError("missing required key '" + key + "'");
    return *v;
  }

  IntegratorOptions integrator() const {
    IntegratorOptions o;
    o.max_step = cfg.real("max_step").value_or(o.max_step);
    o.deriv_tol = cfg.real("deriv_tol").value_or(o.deriv_tol);
    o.t_max = cfg.real("t_max").value_or(o.t_max);
    o.rel_tol = cfg.real("rel_tol").value_or(o.rel_tol);
    o.abs_tol = cfg.real("abs_tol").value_or(o.abs_tol);
    try {
      o.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    return o;
  }

  void reject_unused() const {
    auto u = cfg.unused();
    if (!u.empty()) {
      std::string s;
      for (const auto& k : u) s += (s.empty() ? "" : ", ") + k;
      throw ConfigError("unknown config keys: " + s);
    }
  }
};

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

int cmd_sweep(Context& c, std::ostream& out) {
  SweepConfig s;
  if (auto v = c.cfg.pairs("pairs")) s.pairs = *v;
  if (auto v = c.cfg.reals("gamma_hat_grid")) s.gamma_grid = *v;
  if (auto v = c.cfg.reals("t_grid")) s.t_grid = *v;
  s.games_per_cell = int(c.cfg.integer("games_per_cell").value_or(s.games_per_cell));
  s.starts_per_game = int(c.cfg.integer("starts_per_game").value_or(s.starts_per_game));
  s.dist_tol = c.cfg.real("dist_tol").value_or(s.dist_tol);
  s.master_seed = c.seed();
  s.integrator = c.integrator();
  s.out_dir = c.out_dir();
  s.threads = c.threads();
  s.budget_elements = c.budget();
  std::optional<int> stop_after;
  if (auto v = c.cfg.integer("stop_after_cells")) stop_after = int(*v);
  c.reject_unused();
  SweepOutput r = run_sweep(s, stop_after);
  for (const auto& cell : r.cells)
    out << "p=" << cell.p << " n=" << cell.n << " gamma_hat=" << cell.gamma_hat << " T=" << cell.t
        << " unique=" << cell.n_unique << "/" << cell.games << "\n";
  if (fs::exists(r.csv_path) && !stop_after) out << "wrote " << r.csv_path << "\n";
  return kOk;
}

int cmd_cdf(Context& c, std::ostream& out) {
  int p = int(c.cfg.integer("p").value_or(2));
  auto sizes = c.need(c.cfg.integers("n_list"), "n_list");
  double gamma = c.cfg.real("gamma").value_or(0.0);
  double t = c.need(c.cfg.real("t"), "t");
  int games = int(c.cfg.integer("games_per_size").value_or(10));
  CdfOptions o;
  o.integrator = c.integrator();
  o.threads = c.threads();
  o.budget_elements = c.budget();
  o.zero_payoffs = c.cfg.integer("zero_payoffs").value_or(0) != 0;
  std::string dir = c.out_dir();
  std::uint64_t seed = c.seed();
  c.reject_unused();
  auto runs = run_cdf(p, sizes, gamma, t, games, seed, o);
  write_cdf_csv(dir, runs);
  for (const auto& r : runs) {
    for (const auto& w : r.warnings) out << "warning: " << w << "\n";
    out << "N=" << r.n << " samples=" << r.samples.size() << " excluded=" << r.n_excluded
        << " mass_below_1e-3=" << fmt_double(mass_below(r, 1e-3))
        << " theory=" << fmt_double(r.theoretical_extinction) << "\n";
  }
  return kOk;
}

int cmd_boundary(Context& c, std::ostream& out) {
  int p = int(c.cfg.integer("p").value_or(2));
  auto grid = c.cfg.reals("gamma_hat_grid").value_or(default_gamma_hat_grid());
  double tol = c.cfg.real("tol").value_or(1e-3);
  std::string dir = c.out_dir();
  unsigned threads = c.threads();
  c.reject_unused();
  auto rows = run_boundary(p, grid, tol, threads);
  ensure_dir(dir);
  write_text(join_path(dir, "boundary.csv"), boundary_csv(rows));
  bool failed = false;
  for (const auto& r : rows) {
    out << "gamma_hat=" << r.gamma_hat << " t_crit=" << (r.t_crit ? fmt_double(*r.t_crit) : r.status) << "\n";
    failed |= !r.t_crit;
  }
  return failed ? kSolver : kOk;
}

int cmd_extinction_map(Context& c, std::ostream& out) {
  int p = int(c.cfg.integer("p").value_or(2));
  auto grid = c.cfg.reals("gamma_hat_grid").value_or(default_gamma_hat_grid());
  auto ts = c.cfg.reals("t_grid").value_or(default_t_grid());
  std::string dir = c.out_dir();
  unsigned threads = c.threads();
  c.reject_unused();
  auto cells = run_extinction_map(p, grid, ts, threads);
  ensure_dir(dir);
  write_text(join_path(dir, "extinction_map.csv"), extinction_map_csv(cells));
  int ok = 0;
  for (const auto& x : cells) ok += x.status == "ok";
  out << ok << "/" << cells.size() << " cells solved above T_crit\n";
  return kOk;
}

int cmd_solve(Context& c, std::ostream& out) {
  SolverParams sp;
  sp.p = int(c.cfg.integer("p").value_or(2));
  sp.gamma = c.cfg.real("gamma").value_or(0.0);
  sp.t = c.need(c.cfg.real("t"), "t");
  sp.quad_nodes = int(c.cfg.integer("quad_nodes").value_or(sp.quad_nodes));
  std::string closure = c.cfg.str("closure").value_or("linear");
  if (closure != "linear" && closure != "exact") throw ConfigError("closure must be linear or exact");
  std::string dir = c.out_dir();
  c.reject_unused();
  try {
    sp.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  FixedPointSolution s =
      solve_dmft(sp, closure == "exact" ? MomentClosure::Exact : MomentClosure::Linear);
  StabilityReport st = stability_check(s, sp);
  nlohmann::json j = dmft_json(s);
  j["extinction"] = s.extinction;
  j["stability"] = {{"lhs", json_double(st.lhs)}, {"rhs", st.rhs}, {"margin", json_double(st.margin)},
                    {"stable", st.stable}};
  ensure_dir(dir);
  write_text(join_path(dir, "solve.json"), j.dump(2) + "\n");
  write_text(join_path(dir, "solve.csv"), dmft_csv_header() + "\n" + dmft_csv_record(s) + "\n");
  out << j.dump(2) << "\n";
  return kOk;
}

int cmd_classify(Context& c, std::ostream& out) {
  GameParams gp;
  gp.p = int(c.cfg.integer("p").value_or(2));
  gp.n = int(c.need(c.cfg.integer("n"), "n"));
  gp.gamma = c.cfg.real("gamma").value_or(0.0);
  gp.seed = c.seed();
  double t = c.need(c.cfg.real("t"), "t");
  ClassifyOptions co;
  co.n_starts = int(c.cfg.integer("starts").value_or(co.n_starts));
  co.dist_tol = c.cfg.real("dist_tol").value_or(co.dist_tol);
  co.integrator = c.integrator();
  co.threads = c.threads();
  double budget = c.budget();
  std::string dir = c.out_dir();
  bool dump = c.cfg.integer("write_tensor").value_or(0) != 0;
  c.reject_unused();
  try {
    gp.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  PayoffTensor tensor = sample_payoffs(gp, budget);
  GameClassification g = classify_game(tensor, t, co);
  nlohmann::json j = {{"p", gp.p},
                      {"n", gp.n},
                      {"gamma", gp.gamma},
                      {"t", t},
                      {"seed", gp.seed},
                      {"label", to_string(g.label)},
                      {"n_starts", g.n_starts},
                      {"n_converged", g.n_converged},
                      {"n_failed", g.n_failed},
                      {"max_pairwise_reldist", g.max_pairwise_reldist},
                      {"code_version", kCodeVersion}};
  ensure_dir(dir);
  write_text(join_path(dir, "classify.json"), j.dump(2) + "\n");
  if (dump) write_tensor(join_path(dir, "payoffs.bin"), tensor);
  out << j.dump(2) << "\n";
  return kOk;
}

struct Subcommand {
  const char* name;
  const char* help;
  std::vector<std::pair<const char*, const char*>> keys;  // flag key, description
  std::function<int(Context&, std::ostream&)> body;
};

std::vector<Subcommand> subcommands() {
  const std::pair<const char*, const char*> integ[] = {
      {"max_step", "largest integrator step"}, {"deriv_tol", "fixed-point threshold on sup|dx/dt|"},
      {"t_max", "integration time limit"},     {"rel_tol", "relative error tolerance"},
      {"abs_tol", "absolute error tolerance"}};
  auto with_integ = [&](std::vector<std::pair<const char*, const char*>> v) {
    v.insert(v.end(), std::begin(integ), std::end(integ));
    return v;
  };
  return {
      {"sweep", "multi-start classification over a (p,N) x gamma_hat x T grid",
       with_integ({{"pairs", "(p,N) pairs, e.g. 2x50,3x12"},
                   {"gamma_hat_grid", "comma separated gamma_hat values"},
                   {"t_grid", "comma separated temperatures"},
                   {"games_per_cell", "games per cell"},
                   {"starts_per_game", "starts per game"},
                   {"dist_tol", "relative distance tolerance"},
                   {"stop_after_cells", "compute at most this many new cells"}}),
       cmd_sweep},
      {"cdf", "empirical distribution of rescaled marginals N*x",
       with_integ({{"p", "players"},
                   {"n_list", "comma separated action counts"},
                   {"gamma", "payoff correlation"},
                   {"t", "exploration rate"},
                   {"games_per_size", "games per action count"},
                   {"zero_payoffs", "1 to use all-zero payoffs"}}),
       cmd_cdf},
      {"boundary", "critical exploration rate against gamma_hat",
       {{"p", "players"}, {"gamma_hat_grid", "comma separated gamma_hat values"}, {"tol", "bisection tolerance"}},
       cmd_boundary},
      {"extinction-map", "theoretical extinction rate over gamma_hat x T",
       {{"p", "players"}, {"gamma_hat_grid", "comma separated gamma_hat values"}, {"t_grid", "temperatures"}},
       cmd_extinction_map},
      {"solve", "one mean-field fixed point with its stability report",
       {{"p", "players"},
        {"gamma", "payoff correlation"},
        {"t", "exploration rate"},
        {"quad_nodes", "quadrature nodes"},
        {"closure", "linear or exact (gamma = 0 only)"}},
       cmd_solve},
      {"classify", "multi-start classification of one sampled game",
       with_integ({{"p", "players"},
                   {"n", "actions per player"},
                   {"gamma", "payoff correlation"},
                   {"t", "exploration rate"},
                   {"starts", "number of starts"},
                   {"dist_tol", "relative distance tolerance"},
                   {"write_tensor", "1 to dump the payoff tensor"}}),
       cmd_classify},
  };
}

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Q-learning fixed points in random games", "qlmf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kCodeVersion));

  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::function<int(Context&, std::ostream&)> chosen;
  auto cmds = subcommands();
  for (auto& sc : cmds) {
    CLI::App* sub = app.add_subcommand(sc.name, sc.help);
    sub->add_option("--config", config_path, "key = value config file");
    std::vector<std::pair<const char*, const char*>> keys = {{"seed", "master seed"},
                                                             {"out_dir", "output directory"},
                                                             {"threads", "worker threads (0 = all cores)"},
                                                             {"budget_elements", "payoff element budget"}};
    keys.insert(keys.end(), sc.keys.begin(), sc.keys.end());
    for (auto [key, help] : keys) {
      std::string k = key;
      sub->add_option_function<std::string>(
          flag_name(k), [&overrides, k](const std::string& v) { overrides[k] = v; }, help);
    }
    sub->callback([&chosen, body = sc.body] { chosen = body; });
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    Context c;
    if (!config_path.empty()) c.cfg = KeyValueConfig::load(config_path);
    for (const auto& [k, v] : overrides) c.cfg.set(k, v);
    return chosen(c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ResourceLimitError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << "\n";
    return kSolver;
  } catch (const BracketError& e) {
    err << "bracketing error: " << e.what() << "\n";
    return kSolver;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kSolver;
  }
}

}  // namespace qlmf::cli
