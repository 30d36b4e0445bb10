// Samples one correlated game and classifies it by multi-start convergence
// on either side of the predicted critical exploration rate.
#include <cstdio>

#include "qlmf/qlmf.hpp"

int main() {
  qlmf::GameParams gp{2, 50, 0.5, 42};
  qlmf::PayoffTensor tensor = qlmf::sample_payoffs(gp);
  double t_crit = qlmf::critical_temperature(gp.gamma, gp.p);
  qlmf::ClassifyOptions co;
  co.n_starts = 20;
  co.threads = 0;
  for (double t : {t_crit + 1.0, t_crit - 1.5}) {
    qlmf::GameClassification g = qlmf::classify_game(tensor, t, co);
    std::printf("T=%.3f label=%s converged=%d/%d max_reldist=%.3g\n", t, qlmf::to_string(g.label), g.n_converged,
                g.n_starts, g.max_pairwise_reldist);
  }
}
