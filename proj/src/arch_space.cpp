#include "pathrank/arch_space.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pathrank {

namespace {

bool sorted_unique(const std::vector<int>& v) {
  return std::adjacent_find(v.begin(), v.end(),
                            [](int a, int b) { return a >= b; }) == v.end();
}

bool sorted_unique(const std::vector<double>& v) {
  return std::adjacent_find(v.begin(), v.end(),
                            [](double a, double b) { return a >= b; }) == v.end();
}

}  // namespace

int BlockSpec::layers_for_depth(int depth) const {
  for (std::size_t i = 0; i < depth_choices.size(); ++i) {
    if (depth_choices[i] == depth) return layers_per_depth[i];
  }
  throw std::invalid_argument("depth " + std::to_string(depth) + " is not a choice");
}

bool BlockSpec::has_depth(int depth) const {
  return std::find(depth_choices.begin(), depth_choices.end(), depth) !=
         depth_choices.end();
}

bool BlockSpec::has_width(double width) const {
  return std::find(width_choices.begin(), width_choices.end(), width) !=
         width_choices.end();
}

bool BlockSpec::has_expand(double expand) const {
  return std::find(expand_choices.begin(), expand_choices.end(), expand) !=
         expand_choices.end();
}

BlockSpec make_block(std::vector<int> depths, std::vector<double> widths,
                     std::vector<double> expands, int min_layers) {
  BlockSpec b;
  b.depth_choices = std::move(depths);
  b.width_choices = std::move(widths);
  b.expand_choices = std::move(expands);
  b.layers_per_depth.reserve(b.depth_choices.size());
  for (int d : b.depth_choices) b.layers_per_depth.push_back(min_layers + d);
  return b;
}

int SearchSpace::total_max_layers() const {
  int n = 0;
  for (const auto& b : blocks) n += b.max_layers();
  return n;
}

int SearchSpace::block_resolution(int block) const {
  int r = input_resolution >> (block + 2);
  return std::max(1, r);
}

void validate_space(const SearchSpace& space) {
  if (space.blocks.empty()) throw std::invalid_argument("space has no blocks");
  if (space.input_resolution < 1)
    throw std::invalid_argument("input_resolution must be positive");
  if (space.base_channels.size() != space.blocks.size())
    throw std::invalid_argument("base_channels size must match block count");
  for (std::size_t i = 0; i < space.blocks.size(); ++i) {
    const auto& b = space.blocks[i];
    const std::string at = "block " + std::to_string(i) + ": ";
    if (space.base_channels[i] < 1)
      throw std::invalid_argument(at + "base channels must be positive");
    if (b.depth_choices.empty() || b.width_choices.empty() || b.expand_choices.empty())
      throw std::invalid_argument(at + "empty choice set");
    if (!sorted_unique(b.depth_choices) || !sorted_unique(b.width_choices) ||
        !sorted_unique(b.expand_choices))
      throw std::invalid_argument(at + "choice sets must be sorted ascending, no duplicates");
    if (b.depth_choices.front() < 0)
      throw std::invalid_argument(at + "depth choices must be non-negative");
    for (double w : b.width_choices)
      if (!(w > 0.0 && w <= 1.0))
        throw std::invalid_argument(at + "width choices must lie in (0,1]");
    for (double e : b.expand_choices)
      if (!(e > 0.0 && e <= 1.0))
        throw std::invalid_argument(at + "expand choices must lie in (0,1]");
    if (b.layers_per_depth.size() != b.depth_choices.size())
      throw std::invalid_argument(at + "layers_per_depth must parallel depth_choices");
    if (b.layers_per_depth.front() < 1)
      throw std::invalid_argument(at + "layer counts must be at least 1");
    if (!sorted_unique(b.layers_per_depth))
      throw std::invalid_argument(at + "layers_per_depth must be strictly increasing");
  }
}

SearchSpace default_search_space() {
  SearchSpace s;
  for (int i = 0; i < 4; ++i) {
    s.blocks.push_back(make_block({0, 1, 2}, {0.65, 0.8, 1.0}, {0.2, 0.25, 0.35}));
  }
  s.input_resolution = 32;
  s.base_channels = {16, 24, 32, 48};
  validate_space(s);
  return s;
}

void validate_couple_rule(const SearchSpace& space, const CoupleRule& rule) {
  if (rule.pairs.empty()) throw std::invalid_argument("couple rule has no pairs");
  for (const auto& [d, w] : rule.pairs) {
    for (std::size_t i = 0; i < space.blocks.size(); ++i) {
      const auto& b = space.blocks[i];
      if (!b.has_depth(d) || !b.has_width(w)) {
        std::ostringstream os;
        os << "couple pair (" << d << ", " << format_ratio(w)
           << ") outside the choice sets of block " << i;
        throw std::invalid_argument(os.str());
      }
    }
  }
}

std::vector<std::string> path_violations(const SearchSpace& space, const Path& path) {
  std::vector<std::string> out;
  if (path.blocks.size() != space.blocks.size()) {
    out.push_back("path has " + std::to_string(path.blocks.size()) + " blocks, space has " +
                  std::to_string(space.blocks.size()));
    return out;
  }
  for (std::size_t i = 0; i < path.blocks.size(); ++i) {
    const auto& spec = space.blocks[i];
    const auto& pb = path.blocks[i];
    const std::string at = "block " + std::to_string(i) + ": ";
    if (!spec.has_depth(pb.depth)) {
      out.push_back(at + "depth " + std::to_string(pb.depth) + " not a choice");
      continue;
    }
    if (!spec.has_width(pb.width))
      out.push_back(at + "width " + format_ratio(pb.width) + " not a choice");
    const std::size_t want = static_cast<std::size_t>(spec.layers_for_depth(pb.depth));
    if (pb.expands.size() != want) {
      out.push_back(at + "expected " + std::to_string(want) + " expands, got " +
                    std::to_string(pb.expands.size()));
    }
    for (std::size_t l = 0; l < pb.expands.size(); ++l) {
      if (!spec.has_expand(pb.expands[l]))
        out.push_back(at + "layer " + std::to_string(l) + " expand " +
                      format_ratio(pb.expands[l]) + " not a choice");
    }
  }
  return out;
}

bool validate_path(const SearchSpace& space, const Path& path) {
  return path_violations(space, path).empty();
}

SpaceView make_view(const SearchSpace& space, const CoupleRule* coupling,
                    const ExpandFilter& filter) {
  validate_space(space);
  if (coupling) validate_couple_rule(space, *coupling);
  SpaceView view;
  view.space = &space;
  view.count = 1;
  for (int b = 0; b < space.num_blocks(); ++b) {
    const auto& spec = space.blocks[b];
    std::vector<std::pair<int, double>> pairs;
    if (coupling) {
      pairs = coupling->pairs;
      std::sort(pairs.begin(), pairs.end());
      pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    } else {
      for (int d : spec.depth_choices)
        for (double w : spec.width_choices) pairs.emplace_back(d, w);
    }
    BlockVariants bv;
    bv.total = 0;
    for (const auto& [d, w] : pairs) {
      ChoiceGroup g;
      g.depth = d;
      g.width = w;
      g.combos = 1;
      const int layers = spec.layers_for_depth(d);
      bool dead = false;
      for (int l = 0; l < layers; ++l) {
        std::vector<double> allowed =
            filter ? filter(b, l, w) : spec.expand_choices;
        if (allowed.empty()) {
          dead = true;
          break;
        }
        g.combos *= static_cast<int>(allowed.size());
        g.layer_expands.push_back(std::move(allowed));
      }
      if (dead) continue;
      bv.total += g.combos;
      bv.groups.push_back(std::move(g));
    }
    view.count *= bv.total;
    view.blocks.push_back(std::move(bv));
  }
  return view;
}

SpaceView apply_couple_rule(const SearchSpace& space, const CoupleRule& rule) {
  return make_view(space, &rule);
}

BigInt count_paths(const SpaceView& view) { return view.count; }

BigInt count_paths(const SearchSpace& space, const CoupleRule* coupling) {
  return make_view(space, coupling).count;
}

Path path_at(const SpaceView& view, BigInt index) {
  if (index < 0 || index >= view.count)
    throw std::out_of_range("path index out of range");
  // Suffix radices: index of block b advances by the count of all later blocks.
  const std::size_t n = view.blocks.size();
  std::vector<BigInt> suffix(n + 1);
  suffix[n] = 1;
  for (std::size_t b = n; b-- > 0;) suffix[b] = suffix[b + 1] * view.blocks[b].total;
  Path path;
  path.blocks.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    BigInt local = index / suffix[b + 1];
    index %= suffix[b + 1];
    const ChoiceGroup* group = nullptr;
    for (const auto& g : view.blocks[b].groups) {
      if (local < g.combos) {
        group = &g;
        break;
      }
      local -= g.combos;
    }
    PathBlock& pb = path.blocks[b];
    pb.depth = group->depth;
    pb.width = group->width;
    pb.expands.resize(group->layer_expands.size());
    // Expand odometer, layer 0 most significant.
    for (std::size_t l = group->layer_expands.size(); l-- > 0;) {
      const auto& choices = group->layer_expands[l];
      const BigInt radix = static_cast<int>(choices.size());
      pb.expands[l] = choices[static_cast<std::size_t>(local % radix)];
      local /= radix;
    }
  }
  return path;
}

void enumerate_paths(const SpaceView& view, std::uint64_t cap,
                     const std::function<void(const Path&)>& visit) {
  if (view.count > cap)
    throw std::runtime_error("space too large: " + view.count.str() +
                             " paths exceed cap " + std::to_string(cap));
  for (BigInt i = 0; i < view.count; ++i) visit(path_at(view, i));
}

std::vector<Path> enumerate_paths_vec(const SpaceView& view, std::uint64_t cap) {
  std::vector<Path> out;
  enumerate_paths(view, cap, [&](const Path& p) { out.push_back(p); });
  return out;
}

Path sample_uniform(const SpaceView& view, std::mt19937_64& rng) {
  return path_at(view, uniform_bigint(rng, view.count));
}

bool view_contains(const SpaceView& view, const Path& path) {
  if (path.blocks.size() != view.blocks.size()) return false;
  for (std::size_t b = 0; b < path.blocks.size(); ++b) {
    const auto& pb = path.blocks[b];
    const ChoiceGroup* group = nullptr;
    for (const auto& g : view.blocks[b].groups) {
      if (g.depth == pb.depth && g.width == pb.width) {
        group = &g;
        break;
      }
    }
    if (!group || pb.expands.size() != group->layer_expands.size()) return false;
    for (std::size_t l = 0; l < pb.expands.size(); ++l) {
      const auto& choices = group->layer_expands[l];
      if (std::find(choices.begin(), choices.end(), pb.expands[l]) == choices.end())
        return false;
    }
  }
  return true;
}

nlohmann::json path_to_json(const Path& path) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& pb : path.blocks) {
    nlohmann::json e = nlohmann::json::array();
    for (double x : pb.expands) e.push_back(format_ratio(x));
    blocks.push_back({{"d", pb.depth}, {"w", format_ratio(pb.width)}, {"e", e}});
  }
  return nlohmann::json{{"blocks", blocks}};
}

Path path_from_json(const nlohmann::json& j) {
  Path path;
  for (const auto& jb : j.at("blocks")) {
    PathBlock pb;
    pb.depth = jb.at("d").get<int>();
    pb.width = parse_double(jb.at("w").get<std::string>());
    for (const auto& je : jb.at("e")) pb.expands.push_back(parse_double(je.get<std::string>()));
    path.blocks.push_back(std::move(pb));
  }
  return path;
}

std::string path_to_string(const Path& path) { return path_to_json(path).dump(); }

Path path_from_string(const std::string& s) {
  return path_from_json(nlohmann::json::parse(s));
}

namespace {

nlohmann::json ratios_to_json(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(format_ratio(x));
  return a;
}

std::vector<double> ratios_from_json(const nlohmann::json& a) {
  std::vector<double> out;
  for (const auto& x : a) {
    if (x.is_string())
      out.push_back(parse_double(x.get<std::string>()));
    else
      out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

nlohmann::json space_to_json(const SearchSpace& space) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : space.blocks) {
    blocks.push_back({{"depths", b.depth_choices},
                      {"widths", ratios_to_json(b.width_choices)},
                      {"expands", ratios_to_json(b.expand_choices)},
                      {"layers_per_depth", b.layers_per_depth}});
  }
  return nlohmann::json{{"blocks", blocks},
                        {"input_resolution", space.input_resolution},
                        {"base_channels", space.base_channels}};
}

SearchSpace space_from_json(const nlohmann::json& j) {
  SearchSpace s;
  for (const auto& jb : j.at("blocks")) {
    BlockSpec b;
    b.depth_choices = jb.at("depths").get<std::vector<int>>();
    b.width_choices = ratios_from_json(jb.at("widths"));
    b.expand_choices = ratios_from_json(jb.at("expands"));
    if (jb.contains("layers_per_depth")) {
      b.layers_per_depth = jb.at("layers_per_depth").get<std::vector<int>>();
    } else {
      const int min_layers = jb.value("min_layers", 2);
      for (int d : b.depth_choices) b.layers_per_depth.push_back(min_layers + d);
    }
    s.blocks.push_back(std::move(b));
  }
  s.input_resolution = j.at("input_resolution").get<int>();
  s.base_channels = j.at("base_channels").get<std::vector<int>>();
  validate_space(s);
  return s;
}

nlohmann::json couple_rule_to_json(const CoupleRule& rule) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [d, w] : rule.pairs)
    pairs.push_back({{"d", d}, {"w", format_ratio(w)}});
  return nlohmann::json{{"pairs", pairs}};
}

CoupleRule couple_rule_from_json(const nlohmann::json& j) {
  CoupleRule rule;
  for (const auto& jp : j.at("pairs")) {
    rule.pairs.emplace_back(jp.at("d").get<int>(),
                            parse_double(jp.at("w").get<std::string>()));
  }
  return rule;
}

}  // namespace pathrank
