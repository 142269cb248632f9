#include "pathrank/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

namespace pathrank {

namespace {

using SlotKey = std::tuple<int, int, double>;           // (block, layer, width)
using OpKey = std::tuple<int, int, double, double>;     // + expand

SlotKey slot_of(const OperationCandidate& c) { return {c.block, c.layer, c.width}; }
OpKey key_of(const OperationCandidate& c) {
  return {c.block, c.layer, c.width, c.expand};
}

std::string op_label(const OperationCandidate& c) {
  std::ostringstream os;
  os << "(block " << c.block << ", layer " << c.layer << ", W" << format_ratio(c.width)
     << ", E" << format_ratio(c.expand) << ")";
  return os.str();
}

void check_ratio(double r, const char* name) {
  if (!(r >= 0.0 && r < 1.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in [0, 1)");
  }
}

// Buckets over operation cost. A grid where every candidate costs the same
// (single width/expand choice) collapses to one bucket.
std::vector<int> op_buckets(const std::vector<OperationCandidate>& cands, int num) {
  double lo = cands.front().flops, hi = cands.front().flops;
  for (const auto& c : cands) {
    lo = std::min(lo, c.flops);
    hi = std::max(hi, c.flops);
  }
  std::vector<int> out(cands.size(), 0);
  if (hi > lo) {
    const BucketSpec spec = equal_width_buckets(lo, hi, num);
    for (std::size_t i = 0; i < cands.size(); ++i) out[i] = bucket_of(spec, cands[i].flops);
  }
  return out;
}

// Removal priority: worst score first; among score ties the costlier
// candidate goes, so the cheaper one survives the cut.
bool removal_before(const OperationCandidate& a, const OperationCandidate& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.flops != b.flops) return a.flops > b.flops;
  return key_of(a) < key_of(b);
}

std::size_t ratio_count(double r, std::size_t n) {
  return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
}

}  // namespace

PruneStrategy parse_strategy(const std::string& name) {
  if (name == "flops_uniform") return PruneStrategy::flops_uniform;
  if (name == "flops_score_per_bucket") return PruneStrategy::flops_score_per_bucket;
  if (name == "flops_score_all") return PruneStrategy::flops_score_all;
  throw std::invalid_argument("unknown prune strategy '" + name + "'");
}

std::string strategy_name(PruneStrategy s) {
  switch (s) {
    case PruneStrategy::flops_uniform: return "flops_uniform";
    case PruneStrategy::flops_score_per_bucket: return "flops_score_per_bucket";
    case PruneStrategy::flops_score_all: return "flops_score_all";
  }
  throw std::logic_error("bad strategy value");
}

std::vector<OperationCandidate> enumerate_candidates(const SearchSpace& space) {
  std::vector<OperationCandidate> out;
  for (int b = 0; b < space.num_blocks(); ++b) {
    const BlockSpec& blk = space.blocks[b];
    for (int l = 0; l < blk.max_layers(); ++l) {
      for (double w : blk.width_choices) {
        for (double e : blk.expand_choices) {
          OperationCandidate c{b, l, w, e, operation_flops(space, b, l, w, e), 0.0};
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

Path force_insert(const SpaceView& view, const Path& base, const OperationCandidate& cand,
                  std::mt19937_64& rng) {
  if (cand.block < 0 || cand.block >= static_cast<int>(view.blocks.size())) {
    throw std::invalid_argument("candidate block out of range");
  }
  const SearchSpace& space = *view.space;
  const BlockSpec& blk = space.blocks[cand.block];
  const BlockVariants& bv = view.blocks[cand.block];

  auto hosts = [&](const ChoiceGroup& g) {
    if (g.width != cand.width) return false;
    if (blk.layers_for_depth(g.depth) <= cand.layer) return false;
    const auto& ex = g.layer_expands[cand.layer];
    return std::find(ex.begin(), ex.end(), cand.expand) != ex.end();
  };

  const PathBlock& pb = base.blocks[cand.block];
  const ChoiceGroup* target = nullptr;
  for (const ChoiceGroup& g : bv.groups) {
    if (!hosts(g)) continue;
    if (g.depth == pb.depth) {  // keep the sampled depth when it already works
      target = &g;
      break;
    }
    if (target == nullptr && g.depth >= pb.depth) target = &g;
  }
  if (target == nullptr) {  // sampled depth can't be kept or raised; take any host
    for (const ChoiceGroup& g : bv.groups) {
      if (hosts(g)) {
        target = &g;
        break;
      }
    }
  }
  if (target == nullptr) {
    throw std::invalid_argument("operation " + op_label(cand) +
                                " is unreachable in this view");
  }

  Path p = base;
  PathBlock nb;
  nb.depth = target->depth;
  nb.width = target->width;
  const int n_layers = blk.layers_for_depth(target->depth);
  nb.expands.resize(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const auto& choices = target->layer_expands[l];
    const bool keep = l < static_cast<int>(pb.expands.size()) &&
                      std::find(choices.begin(), choices.end(), pb.expands[l]) !=
                          choices.end();
    nb.expands[l] = keep ? pb.expands[l]
                         : choices[uniform_index(rng, choices.size())];
  }
  nb.expands[cand.layer] = cand.expand;
  p.blocks[cand.block] = nb;
  return p;
}

BatchScorer filter_scorer(const PathFilter& filter) {
  const PathFilter* f = &filter;
  return [f](const std::vector<Path>& paths, const std::vector<int>& buckets) {
    return score_batch(*f, paths, buckets);
  };
}

double score_operation(const BatchScorer& scorer, const BucketSpec& buckets,
                       const SpaceView& view, const OperationCandidate& cand, int n,
                       std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("score_operation needs n >= 1");
  std::vector<Path> paths;
  std::vector<int> ids;
  paths.reserve(n);
  ids.reserve(n);
  for (int i = 0; i < n; ++i) {
    Path p = force_insert(view, sample_uniform(view, rng), cand, rng);
    ids.push_back(bucket_of(buckets, path_flops(*view.space, p)));
    paths.push_back(std::move(p));
  }
  return scorer(paths, ids).mean();
}

double score_operation(const PathFilter& filter, const SpaceView& view,
                       const OperationCandidate& cand, int n, std::mt19937_64& rng) {
  return score_operation(filter_scorer(filter), filter.buckets, view, cand, n, rng);
}

std::vector<OperationCandidate> score_candidates(const BatchScorer& scorer,
                                                 const BucketSpec& buckets,
                                                 const SpaceView& view,
                                                 std::vector<OperationCandidate> cands,
                                                 int n, std::mt19937_64& rng) {
  for (auto& c : cands) c.score = score_operation(scorer, buckets, view, c, n, rng);
  return cands;
}

std::vector<OperationCandidate> score_candidates(const PathFilter& filter,
                                                 const SpaceView& view,
                                                 std::vector<OperationCandidate> cands,
                                                 int n, std::mt19937_64& rng) {
  return score_candidates(filter_scorer(filter), filter.buckets, view, std::move(cands), n,
                          rng);
}

PruneState prune_operations(const SearchSpace& space,
                            const std::vector<OperationCandidate>& scored,
                            PruneStrategy strategy, const PruneRatios& ratios,
                            std::mt19937_64& rng) {
  if (scored.empty()) throw std::invalid_argument("no candidates to prune");
  if (strategy == PruneStrategy::flops_score_all) {
    check_ratio(ratios.r_op1, "r_op1");
    check_ratio(ratios.r_op2, "r_op2");
  } else {
    check_ratio(ratios.r_op, "r_op");
  }

  {  // candidates must belong to the space they prune
    std::set<OpKey> seen;
    for (const auto& c : scored) {
      operation_flops(space, c.block, c.layer, c.width, c.expand);
      if (!seen.insert(key_of(c)).second) {
        throw std::invalid_argument("duplicate candidate " + op_label(c));
      }
    }
  }

  const int kOpBuckets = 5;
  const std::vector<int> ob = op_buckets(scored, kOpBuckets);

  std::map<SlotKey, int> survivors;
  for (const auto& c : scored) ++survivors[slot_of(c)];

  std::vector<char> removed(scored.size(), 0);
  auto try_remove = [&](std::size_t i) {
    int& left = survivors[slot_of(scored[i])];
    if (left <= 1) return false;  // never empty a decision slot
    removed[i] = 1;
    --left;
    return true;
  };
  auto remove_worst = [&](std::vector<std::size_t> order, std::size_t want) {
    std::size_t done = 0;
    for (std::size_t i : order) {
      if (done == want) break;
      if (!removed[i] && try_remove(i)) ++done;
    }
  };
  auto bucket_members = [&](int k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (ob[i] == k && !removed[i]) idx.push_back(i);
    }
    return idx;
  };
  auto score_order = [&](std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return removal_before(scored[a], scored[b]);
    });
    return idx;
  };

  switch (strategy) {
    case PruneStrategy::flops_uniform:
      for (int k = 0; k < kOpBuckets; ++k) {
        std::vector<std::size_t> idx = bucket_members(k);
        const std::size_t want = ratio_count(ratios.r_op, idx.size());
        std::shuffle(idx.begin(), idx.end(), rng);
        remove_worst(std::move(idx), want);
      }
      break;
    case PruneStrategy::flops_score_per_bucket:
      for (int k = 0; k < kOpBuckets; ++k) {
        std::vector<std::size_t> idx = bucket_members(k);
        const std::size_t want = ratio_count(ratios.r_op, idx.size());
        remove_worst(score_order(std::move(idx)), want);
      }
      break;
    case PruneStrategy::flops_score_all: {
      std::vector<std::size_t> all(scored.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      remove_worst(score_order(std::move(all)), ratio_count(ratios.r_op1, scored.size()));
      for (int k = 0; k < kOpBuckets; ++k) {
        std::vector<std::size_t> idx = bucket_members(k);
        const std::size_t want = ratio_count(ratios.r_op2, idx.size());
        remove_worst(score_order(std::move(idx)), want);
      }
      break;
    }
  }

  PruneState st;
  st.strategy = strategy_name(strategy);
  st.ratios = ratios;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (removed[i]) st.removed.push_back(scored[i]);
  }
  std::sort(st.removed.begin(), st.removed.end(),
            [](const OperationCandidate& a, const OperationCandidate& b) {
              return key_of(a) < key_of(b);
            });
  return st;
}

ExpandFilter removal_filter(const SearchSpace& space, const PruneState& st) {
  auto gone = std::make_shared<std::set<OpKey>>();
  for (const auto& c : st.removed) gone->insert(key_of(c));
  const SearchSpace* sp = &space;
  return [gone, sp](int block, int layer, double width) {
    std::vector<double> keep;
    for (double e : sp->blocks[block].expand_choices) {
      if (!gone->count(OpKey{block, layer, width, e})) keep.push_back(e);
    }
    return keep;
  };
}

SpaceView pruned_view(const SearchSpace& space, const PruneState& st,
                      const CoupleRule* coupling) {
  return make_view(space, coupling, removal_filter(space, st));
}

std::vector<double> path_thresholds(const PathFilter& filter, const SpaceView& view,
                                    double r_path, int m_per_bucket, std::mt19937_64& rng,
                                    std::vector<int>* unreachable, std::uint64_t max_draws) {
  if (!(r_path >= 0.0 && r_path < 1.0)) {
    throw std::invalid_argument("r_path must lie in [0, 1)");
  }
  if (m_per_bucket < 1) throw std::invalid_argument("need m_per_bucket >= 1");
  const int B = filter.buckets.num_buckets;
  std::vector<std::vector<Path>> paths(B);
  std::vector<int> filled(B, 0);
  int full = 0;
  for (std::uint64_t d = 0; d < max_draws && full < B; ++d) {
    Path p = sample_uniform(view, rng);
    const int k = bucket_of(filter.buckets, path_flops(*view.space, p));
    if (filled[k] >= m_per_bucket) continue;
    paths[k].push_back(std::move(p));
    if (++filled[k] == m_per_bucket) ++full;
  }
  std::vector<double> delta(B, 0.0);
  for (int k = 0; k < B; ++k) {
    if (paths[k].empty()) {
      if (unreachable) unreachable->push_back(k);
      continue;
    }
    const std::vector<int> kb(paths[k].size(), k);
    const Eigen::VectorXd s = score_batch(filter, paths[k], kb);
    delta[k] = linear_quantile(std::vector<double>(s.data(), s.data() + s.size()), r_path);
  }
  return delta;
}

double linear_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level outside [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

RejectionResult rejection_sample(const SpaceView& view, const PathFilter& filter,
                                 const std::vector<double>& thresholds,
                                 std::mt19937_64& rng, int max_tries) {
  if (static_cast<int>(thresholds.size()) != filter.buckets.num_buckets) {
    throw std::invalid_argument("one threshold per flops bucket required");
  }
  if (max_tries < 1) throw std::invalid_argument("need max_tries >= 1");
  RejectionResult best;
  best.score = -1.0;
  for (int t = 1; t <= max_tries; ++t) {
    Path p = sample_uniform(view, rng);
    const int k = bucket_of(filter.buckets, path_flops(*view.space, p));
    const double s = score(filter, p, k);
    if (s >= thresholds[k]) return RejectionResult{std::move(p), s, k, t, false};
    if (s > best.score) best = RejectionResult{std::move(p), s, k, t, true};
  }
  best.draws = max_tries;
  return best;
}

nlohmann::json prune_state_to_json(const PruneState& st) {
  nlohmann::json removed = nlohmann::json::array();
  for (const auto& c : st.removed) {
    removed.push_back({{"block", c.block},
                       {"layer", c.layer},
                       {"width", format_ratio(c.width)},
                       {"expand", format_ratio(c.expand)},
                       {"flops", c.flops},
                       {"score", c.score}});
  }
  return nlohmann::json{{"strategy", st.strategy},
                        {"ratios",
                         {{"r_op", st.ratios.r_op},
                          {"r_op1", st.ratios.r_op1},
                          {"r_op2", st.ratios.r_op2},
                          {"r_path", st.ratios.r_path}}},
                        {"seed", st.seed},
                        {"removed", removed},
                        {"thresholds", st.thresholds},
                        {"unreachable_buckets", st.unreachable_buckets}};
}

PruneState prune_state_from_json(const nlohmann::json& j) {
  PruneState st;
  st.strategy = j.at("strategy").get<std::string>();
  parse_strategy(st.strategy);
  const auto& r = j.at("ratios");
  st.ratios.r_op = r.at("r_op").get<double>();
  st.ratios.r_op1 = r.at("r_op1").get<double>();
  st.ratios.r_op2 = r.at("r_op2").get<double>();
  st.ratios.r_path = r.at("r_path").get<double>();
  st.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("removed")) {
    OperationCandidate c;
    c.block = e.at("block").get<int>();
    c.layer = e.at("layer").get<int>();
    c.width = parse_double(e.at("width").get<std::string>());
    c.expand = parse_double(e.at("expand").get<std::string>());
    c.flops = e.at("flops").get<double>();
    c.score = e.at("score").get<double>();
    st.removed.push_back(c);
  }
  st.thresholds = j.at("thresholds").get<std::vector<double>>();
  st.unreachable_buckets = j.at("unreachable_buckets").get<std::vector<int>>();
  return st;
}

}  // namespace pathrank
