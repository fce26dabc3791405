// Static vs repartitioned block preconditioning on a uniform-correlation
// quadratic, next to the closed-form rates.

#include <blockprec/blockprec.hpp>

#include <cstdio>

int main() {
  using namespace blockprec;
  const Index n = 200, k = 4;
  const double alpha = 0.1;

  const auto q = gen_uniform_q(n, alpha);
  const auto cf = uniform_closed_form(n, k, alpha);
  std::printf("closed form: rho_static = %.4f  rho_dynamic = %.4f\n", cf.rho_static(), cf.rho_dynamic());

  Rng rng(7);
  Vector c(n);
  for (Index i = 0; i < n; ++i) c(i) = rng.normal();
  const QuadraticObjective obj(q, c);
  const double f_star = obj.optimum().value;

  SolverConfig cfg;
  cfg.k_blocks = k;
  cfg.step = SolverConfig::theorem_step(k);
  cfg.iterations = 30;
  cfg.seed = 1;

  for (auto scheme : {PartitionScheme::Static, PartitionScheme::Dynamic}) {
    cfg.scheme = scheme;
    const auto trace = run(obj, cfg, f_star);
    std::printf("%-7s", to_string(scheme));
    for (Index t = 0; t <= cfg.iterations; t += 10)
      std::printf("  t=%-2lld %.3e", static_cast<long long>(t), trace.records[static_cast<std::size_t>(t)].subopt);
    std::printf("\n");
  }
}
