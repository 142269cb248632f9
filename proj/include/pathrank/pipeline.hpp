#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pathrank/arch_space.hpp"
#include "pathrank/cost_model.hpp"
#include "pathrank/oracle.hpp"
#include "pathrank/path_filter.hpp"
#include "pathrank/pruning.hpp"
#include "pathrank/supernet.hpp"

namespace pathrank {

using PathEval = std::function<double(const Path&)>;

struct SampleReport {
  std::uint64_t draws = 0;
  std::vector<int> filled;  // per bucket
  bool budget_exhausted = false;
};

// Uniform draws from one stream, binned until every bucket holds
// m_per_bucket records (or the draw budget runs out — reported, not fatal,
// since extreme buckets can be arbitrarily thin). Output sorted by bucket,
// then draw order. Each record carries flops, bucket, and eval(path).
std::vector<ScoredPath> sample_scored_dataset(const SpaceView& view,
                                              const BucketSpec& buckets, int m_per_bucket,
                                              std::mt19937_64& rng, const PathEval& eval,
                                              std::uint64_t max_draws = 4000000,
                                              SampleReport* report = nullptr);

// Same binning, but keeps only the paths (e.g. fixed test paths per bucket).
// Short buckets stay short when the budget runs out.
std::vector<std::vector<Path>> sample_bucket_paths(const SpaceView& view,
                                                   const BucketSpec& buckets,
                                                   int per_bucket, std::mt19937_64& rng,
                                                   std::uint64_t max_draws = 4000000);

enum class EvalMode { oracle, supernet };

std::string eval_mode_name(EvalMode m);
EvalMode parse_eval_mode(const std::string& name);

// One experiment = one config = one master seed. Every stage derives its own
// seed as derive_seed(seed, stage_name), so stages are independently
// reproducible and methods sharing a master seed share oracle/task/net
// initialization for paired comparisons.
struct ExperimentConfig {
  SearchSpace space;
  int num_buckets = 5;
  EvalMode mode = EvalMode::oracle;
  OracleConfig oracle;  // seed field ignored; derived from the master seed
  TaskConfig task;      // ditto
  int batch_size = 64;
  double supernet_lr = 0.05;
  FilterConfig filter;
  TrainConfig filter_train;  // seed field ignored; derived
  int m_per_bucket = 100;
  int pretrain_m_per_bucket = 0;  // 0 skips the pretrain stage
  std::string strategy = "flops_score_all";
  PruneRatios ratios;
  int score_samples = 32;
  int warmup_epochs = 5;
  int main_epochs = 65;
  std::optional<CoupleRule> couple;  // used by the coupled baseline
  std::uint64_t seed = 0;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
std::uint64_t config_hash(const ExperimentConfig& cfg);

ExperimentConfig default_experiment_config();

// The oracle / task / supernet a run with this config would construct.
SyntheticOracle make_run_oracle(const ExperimentConfig& cfg);
SyntheticTask make_run_task(const ExperimentConfig& cfg);
ToySupernet make_run_supernet(const ExperimentConfig& cfg);

struct EpochLog {
  std::string stage;  // "warmup" or "main"
  int epoch = 0;
  double mean_loss = 0.0;
  int fallbacks = 0;
  std::vector<std::string> paths;  // canonical string per sampled path
};

// Primary run log: everything in here is deterministic for a fixed config
// and seed. Wall time lives outside the serialized form so re-runs stay
// byte-identical.
struct TrainRunLog {
  std::vector<std::string> stages;  // completion order
  std::vector<EpochLog> epochs;
  double wall_time_sec = 0.0;  // sidecar only, not serialized
};

nlohmann::json train_run_log_to_json(const TrainRunLog& log);
TrainRunLog train_run_log_from_json(const nlohmann::json& j);

struct Algorithm1Result {
  ExperimentConfig config;  // resolved copy; owns the space views point at
  BucketSpec buckets;
  SyntheticTask task;     // supernet mode only
  ToySupernet net;        // supernet mode only
  PathFilter filter;      // empty for baselines
  PruneState prune;       // empty removals for baselines
  std::vector<ScoredPath> filter_data;
  TrainRunLog log;
};

using StageHook = std::function<void(const std::string& stage, const Algorithm1Result&)>;

// Warm-up with uniform sampling, sample + validate a dataset, fine-tune the
// filter, prune operations, compute per-bucket thresholds, then the main
// loop with rejection sampling. The hook fires after each completed stage.
// r_path = 0 pins every threshold to zero so the main loop degenerates to
// uniform sampling (and, with r_op = 0, to the uniform baseline bit for bit).
Algorithm1Result run_algorithm1(const ExperimentConfig& cfg, const StageHook& hook = {});

// Warmup and main loop only, with the filter and prune state supplied as
// artifacts instead of being produced in-run. The filter must have been
// built for this config's space and bucket edges.
Algorithm1Result resume_algorithm1(const ExperimentConfig& cfg, PathFilter filter,
                                   PruneState prune, const StageHook& hook = {});

// Uniform sampling for every epoch on the full (or coupled) space; no
// filter, no pruning. Same seed derivation as run_algorithm1 so paired runs
// share task, oracle, and initial weights.
Algorithm1Result baseline_uniform(const ExperimentConfig& cfg, const StageHook& hook = {});
Algorithm1Result baseline_coupled(const ExperimentConfig& cfg, const StageHook& hook = {});

}  // namespace pathrank
