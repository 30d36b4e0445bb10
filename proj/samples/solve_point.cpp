// Mean-field fixed point and stability at one (p, Gamma, T), then the
// critical exploration rate for the same correlation.
#include <cstdio>

#include "qlmf/qlmf.hpp"

int main() {
  qlmf::SolverParams sp;
  sp.p = 2;
  sp.gamma = 0.5;
  sp.t = 3.0;
  qlmf::FixedPointSolution s = qlmf::solve_dmft(sp);
  qlmf::StabilityReport st = qlmf::stability_check(s, sp);
  std::printf("K=%.8f a=%.8f b=%.8f q=%.8f chi=%.8f\n", s.k, s.a, s.b, s.q, s.chi);
  std::printf("regime=%s extinction=%.3e margin=%.4f\n", qlmf::to_string(s.regime), s.extinction, st.margin);
  std::printf("T_crit=%.4f\n", qlmf::critical_temperature(sp.gamma, sp.p));

  sp.gamma = 0.0;
  sp.t = 1.8;
  qlmf::FixedPointSolution u = qlmf::gamma_zero_solve(sp);
  std::printf("uncorrelated, T=1.8: extinction=%.4f%% z_crit=%.6f\n", 100 * u.extinction, u.z_crit);
}
