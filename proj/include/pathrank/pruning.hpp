#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pathrank/arch_space.hpp"
#include "pathrank/cost_model.hpp"
#include "pathrank/path_filter.hpp"

namespace pathrank {

// One prunable layer configuration: (block, layer, width, expand).
struct OperationCandidate {
  int block = 0;
  int layer = 0;
  double width = 1.0;
  double expand = 0.25;
  double flops = 0.0;
  double score = 0.0;

  bool same_op(const OperationCandidate& o) const {
    return block == o.block && layer == o.layer && width == o.width && expand == o.expand;
  }
};

enum class PruneStrategy {
  flops_uniform,          // per op-FLOPs bucket, remove r_op at random
  flops_score_per_bucket, // per op-FLOPs bucket, remove worst r_op by score
  flops_score_all,        // worst r_op1 globally, then worst r_op2 per bucket
};

PruneStrategy parse_strategy(const std::string& name);
std::string strategy_name(PruneStrategy s);

struct PruneRatios {
  double r_op = 0.0;
  double r_op1 = 0.10;
  double r_op2 = 0.30;
  double r_path = 0.25;
};

struct PruneState {
  std::string strategy;
  PruneRatios ratios;
  std::uint64_t seed = 0;
  std::vector<OperationCandidate> removed;
  std::vector<double> thresholds;        // delta per path-FLOPs bucket
  std::vector<int> unreachable_buckets;  // delta forced to 0 there
};

nlohmann::json prune_state_to_json(const PruneState& st);
PruneState prune_state_from_json(const nlohmann::json& j);

// The full candidate grid, ordered (block, layer, width, expand) ascending,
// with flops filled in and score zeroed.
std::vector<OperationCandidate> enumerate_candidates(const SearchSpace& space);

// Rewrites a sampled path so the candidate operation is active: the block's
// width becomes the candidate's, the depth is raised to the smallest choice
// activating the layer (fresh layers draw expands from the view), and the
// layer's expand becomes the candidate's. Throws if no (depth, width) group
// of the view can host the candidate.
Path force_insert(const SpaceView& view, const Path& base, const OperationCandidate& cand,
                  std::mt19937_64& rng);

// Anything that can score a batch of paths with their bucket ids; the path
// filter is the production scorer, oracles stand in for it in tests and
// oracle-mode runs.
using BatchScorer =
    std::function<Eigen::VectorXd(const std::vector<Path>&, const std::vector<int>&)>;

BatchScorer filter_scorer(const PathFilter& filter);

// Mean score of n forced-insertion samples.
double score_operation(const BatchScorer& scorer, const BucketSpec& buckets,
                       const SpaceView& view, const OperationCandidate& cand, int n,
                       std::mt19937_64& rng);
double score_operation(const PathFilter& filter, const SpaceView& view,
                       const OperationCandidate& cand, int n, std::mt19937_64& rng);

std::vector<OperationCandidate> score_candidates(const BatchScorer& scorer,
                                                 const BucketSpec& buckets,
                                                 const SpaceView& view,
                                                 std::vector<OperationCandidate> cands,
                                                 int n, std::mt19937_64& rng);
std::vector<OperationCandidate> score_candidates(const PathFilter& filter,
                                                 const SpaceView& view,
                                                 std::vector<OperationCandidate> cands,
                                                 int n, std::mt19937_64& rng);

// Selects removals by strategy over 5 equal-width operation-FLOPs buckets.
// Ties at the cut keep the cheaper candidate; a slot's last surviving expand
// is never removed. Thresholds are left empty (see path_thresholds).
PruneState prune_operations(const SearchSpace& space,
                            const std::vector<OperationCandidate>& scored,
                            PruneStrategy strategy, const PruneRatios& ratios,
                            std::mt19937_64& rng);

// View of the space with the removed operations masked out.
ExpandFilter removal_filter(const SearchSpace& space, const PruneState& st);
SpaceView pruned_view(const SearchSpace& space, const PruneState& st,
                      const CoupleRule* coupling = nullptr);

// Empirical r_path-quantile of sampled scores per path bucket; unreachable
// buckets get delta = 0 and are recorded.
std::vector<double> path_thresholds(const PathFilter& filter, const SpaceView& view,
                                    double r_path, int m_per_bucket, std::mt19937_64& rng,
                                    std::vector<int>* unreachable = nullptr,
                                    std::uint64_t max_draws = 2000000);

// Linear-interpolated quantile (the (n-1)q rule).
double linear_quantile(std::vector<double> values, double q);

struct RejectionResult {
  Path path;
  double score = 0.0;
  int bucket = 0;
  int draws = 0;
  bool fallback = false;
};

// Uniform draws until the filter score clears the draw's bucket threshold;
// after max_tries the best-scoring draw is returned and flagged.
RejectionResult rejection_sample(const SpaceView& view, const PathFilter& filter,
                                 const std::vector<double>& thresholds,
                                 std::mt19937_64& rng, int max_tries = 100);

}  // namespace pathrank
