#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pathrank/arch_space.hpp"

namespace pathrank {

// All costs are MFLOPs, counting one multiply-accumulate as two operations.
struct FlopsReport {
  double total = 0.0;
  std::vector<double> per_block;
  std::vector<std::vector<double>> per_layer;
};

// Bottleneck cost of one active layer at block `block`: 1x1 reduce
// (C -> eC), 3x3 on eC channels, 1x1 expand (eC -> C), times the spatial
// area of the block, with C = base_channels * width. Strictly monotone in
// width and expand. Skip (inactive) layers cost zero.
double layer_flops(const SearchSpace& space, int block, double width, double expand);

// Standalone cost of a single candidate operation; the layer index only has
// to exist under some depth choice of the block.
double operation_flops(const SearchSpace& space, int block, int layer, double width,
                       double expand);

FlopsReport path_flops_report(const SearchSpace& space, const Path& path);
double path_flops(const SearchSpace& space, const Path& path);

// Equal-width partition of [min_flops, max_flops] into B buckets. Interior
// buckets are half-open [edge_k, edge_{k+1}); the last is closed at max.
struct BucketSpec {
  int num_buckets = 0;
  double min_flops = 0.0;
  double max_flops = 0.0;

  std::vector<double> edges() const;  // B+1 ascending values
  double upper_edge(int bucket) const;
};

BucketSpec equal_width_buckets(double min_flops, double max_flops, int num_buckets);

// Bounds come from the all-min and all-max paths; valid because path_flops
// is coordinate-monotone.
BucketSpec make_buckets(const SearchSpace& space, int num_buckets);

// Throws std::out_of_range when flops falls outside [min, max].
int bucket_of(const BucketSpec& spec, double flops);

Path all_min_path(const SearchSpace& space);
Path all_max_path(const SearchSpace& space);

nlohmann::json bucket_spec_to_json(const BucketSpec& spec);
BucketSpec bucket_spec_from_json(const nlohmann::json& j);

}  // namespace pathrank
