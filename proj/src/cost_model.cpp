#include "pathrank/cost_model.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pathrank {

double layer_flops(const SearchSpace& space, int block, double width, double expand) {
  const double c = space.base_channels[block] * width;
  const double inner = expand * c;
  const double area = static_cast<double>(space.block_resolution(block)) *
                      static_cast<double>(space.block_resolution(block));
  // reduce + 3x3 + expand, 2 FLOPs per MAC.
  const double macs = area * (c * inner + 9.0 * inner * inner + inner * c);
  return 2.0 * macs / 1e6;
}

double operation_flops(const SearchSpace& space, int block, int layer, double width,
                       double expand) {
  if (block < 0 || block >= space.num_blocks())
    throw std::invalid_argument("operation_flops: block out of range");
  const auto& spec = space.blocks[block];
  if (layer < 0 || layer >= spec.max_layers())
    throw std::invalid_argument("operation_flops: layer out of range");
  if (!spec.has_width(width) || !spec.has_expand(expand))
    throw std::invalid_argument("operation_flops: width/expand not a choice");
  return layer_flops(space, block, width, expand);
}

FlopsReport path_flops_report(const SearchSpace& space, const Path& path) {
  const auto violations = path_violations(space, path);
  if (!violations.empty())
    throw std::invalid_argument("path_flops: invalid path: " + violations.front());
  FlopsReport report;
  for (int b = 0; b < space.num_blocks(); ++b) {
    const auto& pb = path.blocks[b];
    const int max_layers = space.blocks[b].max_layers();
    const int active = static_cast<int>(pb.expands.size());
    std::vector<double> layers(max_layers, 0.0);
    double block_total = 0.0;
    for (int l = 0; l < active; ++l) {
      layers[l] = layer_flops(space, b, pb.width, pb.expands[l]);
      block_total += layers[l];
    }
    report.per_layer.push_back(std::move(layers));
    report.per_block.push_back(block_total);
    report.total += block_total;
  }
  return report;
}

double path_flops(const SearchSpace& space, const Path& path) {
  return path_flops_report(space, path).total;
}

Path all_min_path(const SearchSpace& space) {
  Path p;
  for (const auto& b : space.blocks) {
    PathBlock pb;
    pb.depth = b.depth_choices.front();
    pb.width = b.width_choices.front();
    pb.expands.assign(b.layers_for_depth(pb.depth), b.expand_choices.front());
    p.blocks.push_back(std::move(pb));
  }
  return p;
}

Path all_max_path(const SearchSpace& space) {
  Path p;
  for (const auto& b : space.blocks) {
    PathBlock pb;
    pb.depth = b.depth_choices.back();
    pb.width = b.width_choices.back();
    pb.expands.assign(b.layers_for_depth(pb.depth), b.expand_choices.back());
    p.blocks.push_back(std::move(pb));
  }
  return p;
}

std::vector<double> BucketSpec::edges() const {
  std::vector<double> e(num_buckets + 1);
  for (int k = 0; k <= num_buckets; ++k) {
    e[k] = min_flops + (max_flops - min_flops) * k / num_buckets;
  }
  e[0] = min_flops;
  e[num_buckets] = max_flops;
  return e;
}

double BucketSpec::upper_edge(int bucket) const {
  if (bucket < 0 || bucket >= num_buckets)
    throw std::out_of_range("bucket index out of range");
  if (bucket == num_buckets - 1) return max_flops;
  return min_flops + (max_flops - min_flops) * (bucket + 1) / num_buckets;
}

BucketSpec equal_width_buckets(double min_flops, double max_flops, int num_buckets) {
  if (num_buckets < 1) throw std::invalid_argument("need at least one bucket");
  if (!(max_flops > min_flops))
    throw std::invalid_argument("max_flops must exceed min_flops");
  return BucketSpec{num_buckets, min_flops, max_flops};
}

BucketSpec make_buckets(const SearchSpace& space, int num_buckets) {
  const double lo = path_flops(space, all_min_path(space));
  const double hi = path_flops(space, all_max_path(space));
  return equal_width_buckets(lo, hi, num_buckets);
}

int bucket_of(const BucketSpec& spec, double flops) {
  if (flops < spec.min_flops || flops > spec.max_flops) {
    std::ostringstream os;
    os << "flops " << flops << " outside bucket range [" << spec.min_flops << ", "
       << spec.max_flops << "]";
    throw std::out_of_range(os.str());
  }
  if (flops == spec.max_flops) return spec.num_buckets - 1;
  const double rel = (flops - spec.min_flops) / (spec.max_flops - spec.min_flops);
  int k = static_cast<int>(std::floor(rel * spec.num_buckets));
  if (k >= spec.num_buckets) k = spec.num_buckets - 1;
  if (k < 0) k = 0;
  return k;
}

nlohmann::json bucket_spec_to_json(const BucketSpec& spec) {
  return nlohmann::json{{"num_buckets", spec.num_buckets},
                        {"min_flops", spec.min_flops},
                        {"max_flops", spec.max_flops}};
}

BucketSpec bucket_spec_from_json(const nlohmann::json& j) {
  return equal_width_buckets(j.at("min_flops").get<double>(),
                             j.at("max_flops").get<double>(),
                             j.at("num_buckets").get<int>());
}

}  // namespace pathrank
