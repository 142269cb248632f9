#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pathrank/arch_space.hpp"
#include "pathrank/path_filter.hpp"

namespace pathrank {

struct EvoConfig {
  int population_size = 64;
  int sample_size = 16;  // tournament size
  int generations = 500;
  double mutation_prob = 0.1;  // per decision
  int retry_cap = 50;          // infeasible-mutant retries before keeping the parent
  int init_draw_cap = 20000;   // total uniform draws allowed to fill the population
  std::uint64_t seed = 0;
};

struct SearchResult {
  Path best;
  double score = 0.0;
  double flops = 0.0;
  int generation_found = 0;     // 0 = already present after initialization
  std::vector<double> history;  // best-ever score after init, then each generation
};

// Higher is better. The filter overload conditions each path on its own
// FLOPs bucket; tests substitute analytic proxies.
using PathScorer = std::function<double(const Path&)>;

PathScorer proxy_scorer(const PathFilter& filter);

// Aging evolution under a FLOPs budget: feasible uniform initialization
// (throws std::runtime_error when the draw cap passes without filling the
// population), tournament selection, per-decision mutation restricted to the
// view — removed operations cannot come back — with infeasible mutants
// re-mutated up to retry_cap before the parent is kept, oldest-out
// replacement, and best-ever feasible tracking.
SearchResult evolve(const PathScorer& scorer, const SpaceView& view, double budget,
                    const EvoConfig& cfg);
SearchResult evolve(const PathFilter& filter, const SpaceView& view, double budget,
                    const EvoConfig& cfg);

// Exact argmax over every feasible path; first in lexicographic order wins
// ties. Throws when the view exceeds cap or no path fits the budget.
Path brute_force_best(const PathScorer& scorer, const SpaceView& view, double budget,
                      std::uint64_t cap = 1000000);

// One evolve per budget with a shared base seed. Best-ever results carry
// forward from smaller budgets (feasible sets nest), so scores listed in
// ascending budget order never decrease.
std::vector<SearchResult> pareto_sweep(const PathFilter& filter, const SpaceView& view,
                                       const std::vector<double>& budgets,
                                       const EvoConfig& cfg);
std::vector<SearchResult> pareto_sweep(const PathScorer& scorer, const SpaceView& view,
                                       const std::vector<double>& budgets,
                                       const EvoConfig& cfg);

// budget,flops,proxy_score,oracle_loss,generation_found — oracle_loss blank
// unless an oracle evaluator is supplied.
std::string pareto_csv(const std::vector<double>& budgets,
                       const std::vector<SearchResult>& results,
                       const PathScorer& oracle_loss = {});

}  // namespace pathrank
