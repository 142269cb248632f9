#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pathrank/arch_space.hpp"
#include "pathrank/autodiff.hpp"
#include "pathrank/cost_model.hpp"
#include "pathrank/tokenizer.hpp"

namespace pathrank {

// One evaluated architecture: the training unit of the ranking filter.
struct ScoredPath {
  Path path;
  double flops = 0.0;
  int bucket = 0;
  double target_loss = 0.0;
};

struct FilterConfig {
  int model_dim = 128;
  int num_heads = 4;
  int num_encoder_layers = 3;
  int ff_dim = 128;
  int head_hidden = 128;
  // Ablation switches: zero out the bucket embedding input / skip the block
  // positional term. Parameter shapes stay fixed so checkpoints stay
  // layout-compatible across ablations.
  bool use_bucket_embedding = true;
  bool use_block_pe = true;
};

// The ranking model plus everything needed to turn a Path into its input:
// vocabulary, bucket edges, the source space, and precomputed positional
// tables.
struct PathFilter {
  FilterConfig config;
  SearchSpace space;
  Vocabulary vocab;
  BucketSpec buckets;
  std::vector<std::string> param_names;
  std::vector<ad::MatD> params;
  Eigen::MatrixXd layer_pe;  // L_max x d
  Eigen::MatrixXd block_pe;  // num_blocks x d

  int seq_len() const { return static_cast<int>(layer_pe.rows()); }
};

PathFilter make_path_filter(const SearchSpace& space, const BucketSpec& buckets,
                            const FilterConfig& config, std::uint64_t seed);

std::size_t parameter_count(const PathFilter& f);

// Plain-Eigen batched forward (no tape); the fast path for scoring.
Eigen::VectorXd score_batch(const PathFilter& f, const std::vector<Path>& paths,
                            const std::vector<int>& buckets);
double score(const PathFilter& f, const Path& path, int bucket);
Eigen::VectorXd score_dataset(const PathFilter& f, const std::vector<ScoredPath>& data);

// Tape forward used in training; must match score_batch bit-for-bit modulo
// floating-point associativity (tested to tight tolerance).
ad::VarD score_batch_tape(ad::TapeD& tape, const std::vector<ad::VarD>& params,
                          const PathFilter& f, const std::vector<Path>& paths,
                          const std::vector<int>& buckets);

// Squared hinge on the score difference, s in {+1,-1}.
double pair_loss(double g_a, double g_b, int s);

// Index pair into a ScoredPath dataset with its ranking label.
struct RankPair {
  int first = 0;
  int second = 0;
  int sign = +1;  // +1 iff target_loss(first) <= target_loss(second)
};

// Same-bucket pairs (or every pair when bucket_bounded is false — the
// pairing ablation). Ties in target_loss are skipped; above the per-group
// cap a uniform subsample without replacement is drawn.
std::vector<RankPair> build_pairs(const std::vector<ScoredPath>& data,
                                  std::size_t max_pairs_per_bucket, std::mt19937_64& rng,
                                  bool bucket_bounded = true);

struct TrainConfig {
  double lr = 1e-3;
  int batch_pairs = 256;
  int max_epochs = 200;
  int patience = 20;
  std::size_t max_pairs_per_bucket = 2000;
  bool bucket_bounded_pairs = true;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_pair_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
};

// Bucket-stratified 80/20 split, mini-batch Adam on the mean pair loss,
// early stop on validation pair loss, returns the best-validation snapshot
// in f.params.
TrainResult train_filter(PathFilter& f, const std::vector<ScoredPath>& data,
                         const TrainConfig& cfg);

double pair_accuracy(const PathFilter& f, const std::vector<ScoredPath>& data,
                     const std::vector<RankPair>& pairs);

struct DetectionMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int true_weak = 0;
  int predicted_weak = 0;
};

// Weak set per bucket: the worst floor(r*m) records by target_loss (ground
// truth) and by score (prediction, low score = predicted weak); metrics over
// the union of buckets.
DetectionMetrics weak_detection_metrics(const PathFilter& f,
                                        const std::vector<ScoredPath>& data, double ratio);
DetectionMetrics weak_detection_from_scores(const std::vector<ScoredPath>& data,
                                            const Eigen::VectorXd& scores, double ratio);

}  // namespace pathrank
