#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pathrank/common.hpp"

namespace pathrank {

// One block of the chain-structured search space. Choice sets are sorted
// ascending; layers_per_depth is parallel to depth_choices and strictly
// increasing so the token sequence of a path determines its depth.
struct BlockSpec {
  std::vector<int> depth_choices;
  std::vector<double> width_choices;
  std::vector<double> expand_choices;
  std::vector<int> layers_per_depth;

  int max_layers() const { return layers_per_depth.back(); }
  int layers_for_depth(int depth) const;
  bool has_depth(int depth) const;
  bool has_width(double width) const;
  bool has_expand(double expand) const;
};

// layers_for_depth defaults to min_layers + d: depth 0 keeps a two-layer
// bottleneck, each extra depth step adds one layer.
BlockSpec make_block(std::vector<int> depths, std::vector<double> widths,
                     std::vector<double> expands, int min_layers = 2);

struct SearchSpace {
  std::vector<BlockSpec> blocks;
  int input_resolution = 32;
  std::vector<int> base_channels;

  int num_blocks() const { return static_cast<int>(blocks.size()); }
  int total_max_layers() const;
  // Feature-map side length at block b: stem downsamples by 4, each
  // following block by 2.
  int block_resolution(int block) const;
};

// Throws std::invalid_argument describing the first violated invariant.
void validate_space(const SearchSpace& space);

// The 4-block desk-scale space: D={0,1,2}, W={0.65,0.8,1.0},
// E={0.2,0.25,0.35}.
SearchSpace default_search_space();

struct PathBlock {
  int depth = 0;
  double width = 1.0;
  std::vector<double> expands;

  bool operator==(const PathBlock&) const = default;
};

struct Path {
  std::vector<PathBlock> blocks;

  bool operator==(const Path&) const = default;
};

// Coupled (depth, width) tuples applied to every block, CompOFA style.
struct CoupleRule {
  std::vector<std::pair<int, double>> pairs;
};

void validate_couple_rule(const SearchSpace& space, const CoupleRule& rule);

// Empty result means the path is valid. Each entry is one human/machine
// readable violation like "block 1: width 0.7 not a choice".
std::vector<std::string> path_violations(const SearchSpace& space, const Path& path);
bool validate_path(const SearchSpace& space, const Path& path);

// Restricts the expand choices available at (block, layer, width). Used by
// operation pruning; the default keeps the block's full expand set.
using ExpandFilter =
    std::function<std::vector<double>(int block, int layer, double width)>;

// A SpaceView is the enumerable form of a (possibly coupled and/or pruned)
// space: per block, the surviving (depth, width) groups with per-layer
// expand choices. All counting, enumeration and sampling run on views.
struct ChoiceGroup {
  int depth = 0;
  double width = 1.0;
  std::vector<std::vector<double>> layer_expands;
  BigInt combos;  // product over layers of |expand choices|
};

struct BlockVariants {
  std::vector<ChoiceGroup> groups;  // sorted by (depth, width)
  BigInt total;                     // sum of group combos
};

struct SpaceView {
  const SearchSpace* space = nullptr;
  std::vector<BlockVariants> blocks;
  BigInt count;
};

SpaceView make_view(const SearchSpace& space, const CoupleRule* coupling = nullptr,
                    const ExpandFilter& filter = {});

// Alias for make_view with a mandatory rule; validates the rule first.
SpaceView apply_couple_rule(const SearchSpace& space, const CoupleRule& rule);

BigInt count_paths(const SpaceView& view);
BigInt count_paths(const SearchSpace& space, const CoupleRule* coupling = nullptr);

// Decode of the lexicographic index: block 0 is the most significant digit;
// within a block, (depth, width) groups ascending, then the expand odometer
// with layer 0 most significant.
Path path_at(const SpaceView& view, BigInt index);

// Visits every path exactly once in lexicographic order. Throws
// std::runtime_error("space too large...") when count exceeds cap.
void enumerate_paths(const SpaceView& view, std::uint64_t cap,
                     const std::function<void(const Path&)>& visit);
std::vector<Path> enumerate_paths_vec(const SpaceView& view, std::uint64_t cap);

// Exactly uniform over the paths enumerate_paths yields (index decode).
Path sample_uniform(const SpaceView& view, std::mt19937_64& rng);

bool view_contains(const SpaceView& view, const Path& path);

// Canonical serialization: {"blocks":[{"d":0,"e":["0.2",...],"w":"0.65"}]},
// keys sorted, ratios as shortest round-trip decimal strings.
nlohmann::json path_to_json(const Path& path);
Path path_from_json(const nlohmann::json& j);
std::string path_to_string(const Path& path);
Path path_from_string(const std::string& s);

nlohmann::json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const nlohmann::json& j);

nlohmann::json couple_rule_to_json(const CoupleRule& rule);
CoupleRule couple_rule_from_json(const nlohmann::json& j);

}  // namespace pathrank
