#include "pathrank/evo_search.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pathrank/cost_model.hpp"

namespace pathrank {

namespace {

struct Individual {
  Path path;
  double score = 0.0;
  double flops = 0.0;
};

void validate_evo(const EvoConfig& cfg) {
  if (cfg.population_size < 1) throw std::invalid_argument("population_size must be positive");
  if (cfg.sample_size < 1 || cfg.sample_size > cfg.population_size) {
    throw std::invalid_argument("sample_size must be in [1, population_size]");
  }
  if (cfg.generations < 1) throw std::invalid_argument("generations must be >= 1");
  if (cfg.mutation_prob < 0.0 || cfg.mutation_prob > 1.0) {
    throw std::invalid_argument("mutation_prob must be in [0, 1]");
  }
  if (cfg.retry_cap < 0) throw std::invalid_argument("retry_cap must be non-negative");
  if (cfg.init_draw_cap < 1) throw std::invalid_argument("init_draw_cap must be positive");
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[uniform_index(rng, v.size())];
}

// Re-draws each decision of the block — depth, width, then every layer's
// expand — with probability p, constrained to the view's surviving groups.
// A width or expand made illegal by an earlier re-draw is redrawn
// unconditionally; layers kept across a depth change keep their expands.
PathBlock mutate_block(const BlockVariants& variants, const PathBlock& cur, double p,
                       std::mt19937_64& rng) {
  std::bernoulli_distribution flip(p);

  std::vector<int> depths;
  for (const auto& g : variants.groups) {
    if (depths.empty() || depths.back() != g.depth) depths.push_back(g.depth);
  }
  int depth = cur.depth;
  if (flip(rng)) depth = pick(depths, rng);

  std::vector<double> widths;
  for (const auto& g : variants.groups) {
    if (g.depth == depth) widths.push_back(g.width);
  }
  double width = cur.width;
  const bool width_legal = std::find(widths.begin(), widths.end(), width) != widths.end();
  if (flip(rng) || !width_legal) width = pick(widths, rng);

  const ChoiceGroup* group = nullptr;
  for (const auto& g : variants.groups) {
    if (g.depth == depth && g.width == width) {
      group = &g;
      break;
    }
  }

  PathBlock out;
  out.depth = depth;
  out.width = width;
  const std::size_t layers = group->layer_expands.size();
  out.expands.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::vector<double>& allowed = group->layer_expands[l];
    const bool carried = l < cur.expands.size() &&
                         std::find(allowed.begin(), allowed.end(), cur.expands[l]) !=
                             allowed.end();
    if (carried && !flip(rng)) {
      out.expands[l] = cur.expands[l];
    } else {
      out.expands[l] = pick(allowed, rng);
    }
  }
  return out;
}

Path mutate(const SpaceView& view, const Path& parent, double p, std::mt19937_64& rng) {
  Path out;
  out.blocks.reserve(parent.blocks.size());
  for (std::size_t b = 0; b < parent.blocks.size(); ++b) {
    out.blocks.push_back(mutate_block(view.blocks[b], parent.blocks[b], p, rng));
  }
  return out;
}

}  // namespace

PathScorer proxy_scorer(const PathFilter& filter) {
  const PathFilter* f = &filter;
  return [f](const Path& p) {
    const double flops = path_flops(f->space, p);
    return score(*f, p, bucket_of(f->buckets, flops));
  };
}

SearchResult evolve(const PathScorer& scorer, const SpaceView& view, double budget,
                    const EvoConfig& cfg) {
  validate_evo(cfg);
  if (!scorer) throw std::invalid_argument("evolve: empty scorer");
  const SearchSpace& space = *view.space;
  auto rng = make_rng(cfg.seed);

  std::deque<Individual> pop;
  int draws = 0;
  while (static_cast<int>(pop.size()) < cfg.population_size) {
    if (draws >= cfg.init_draw_cap) {
      throw std::runtime_error("evolve: no feasible population within " +
                               std::to_string(cfg.init_draw_cap) + " draws at budget " +
                               format_double(budget));
    }
    Path p = sample_uniform(view, rng);
    ++draws;
    const double f = path_flops(space, p);
    if (f > budget) continue;
    pop.push_back(Individual{std::move(p), 0.0, f});
  }
  for (auto& ind : pop) ind.score = scorer(ind.path);

  SearchResult res;
  res.generation_found = 0;
  res.score = -std::numeric_limits<double>::infinity();
  for (const auto& ind : pop) {
    if (ind.score > res.score) {
      res.best = ind.path;
      res.score = ind.score;
      res.flops = ind.flops;
    }
  }
  res.history.push_back(res.score);

  std::vector<std::size_t> idx(pop.size());
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    // Tournament without replacement: partial Fisher-Yates over the indices.
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::size_t best_i = idx.size();
    for (int s = 0; s < cfg.sample_size; ++s) {
      const std::size_t j =
          std::size_t(s) + uniform_index(rng, idx.size() - std::size_t(s));
      std::swap(idx[std::size_t(s)], idx[j]);
      if (best_i == idx.size() || pop[idx[std::size_t(s)]].score > pop[best_i].score) {
        best_i = idx[std::size_t(s)];
      }
    }
    const Individual parent = pop[best_i];

    // The parent itself re-enters as the aged copy when every retry lands
    // over budget.
    Individual child = parent;
    for (int attempt = 0; attempt < cfg.retry_cap; ++attempt) {
      Path cand = mutate(view, parent.path, cfg.mutation_prob, rng);
      const double f = path_flops(space, cand);
      if (f <= budget) {
        child = Individual{std::move(cand), 0.0, f};
        child.score = scorer(child.path);
        break;
      }
    }

    pop.push_back(child);
    pop.pop_front();
    if (child.score > res.score) {
      res.best = child.path;
      res.score = child.score;
      res.flops = child.flops;
      res.generation_found = gen;
    }
    res.history.push_back(res.score);
  }
  return res;
}

SearchResult evolve(const PathFilter& filter, const SpaceView& view, double budget,
                    const EvoConfig& cfg) {
  return evolve(proxy_scorer(filter), view, budget, cfg);
}

Path brute_force_best(const PathScorer& scorer, const SpaceView& view, double budget,
                      std::uint64_t cap) {
  if (!scorer) throw std::invalid_argument("brute_force_best: empty scorer");
  const SearchSpace& space = *view.space;
  bool found = false;
  Path best;
  double best_score = 0.0;
  enumerate_paths(view, cap, [&](const Path& p) {
    if (path_flops(space, p) > budget) return;
    const double s = scorer(p);
    if (!found || s > best_score) {  // strict: ties keep the lexicographic first
      found = true;
      best = p;
      best_score = s;
    }
  });
  if (!found) throw std::runtime_error("brute_force_best: no path within budget");
  return best;
}

std::vector<SearchResult> pareto_sweep(const PathScorer& scorer, const SpaceView& view,
                                       const std::vector<double>& budgets,
                                       const EvoConfig& cfg) {
  std::vector<std::size_t> order(budgets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return budgets[a] < budgets[b]; });

  std::vector<SearchResult> results(budgets.size());
  const SearchResult* carried = nullptr;
  for (std::size_t k : order) {
    SearchResult r = evolve(scorer, view, budgets[k], cfg);
    // Feasible sets nest upward, so the best found under a smaller budget
    // stays admissible here; keeping it makes the front monotone.
    if (carried && carried->score > r.score) {
      r.best = carried->best;
      r.score = carried->score;
      r.flops = carried->flops;
      r.generation_found = carried->generation_found;
    }
    results[k] = std::move(r);
    carried = &results[k];
  }
  return results;
}

std::vector<SearchResult> pareto_sweep(const PathFilter& filter, const SpaceView& view,
                                       const std::vector<double>& budgets,
                                       const EvoConfig& cfg) {
  return pareto_sweep(proxy_scorer(filter), view, budgets, cfg);
}

std::string pareto_csv(const std::vector<double>& budgets,
                       const std::vector<SearchResult>& results,
                       const PathScorer& oracle_loss) {
  if (budgets.size() != results.size()) {
    throw std::invalid_argument("pareto_csv: budgets and results differ in length");
  }
  std::ostringstream out;
  out << "budget,flops,proxy_score,oracle_loss,generation_found\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const SearchResult& r = results[i];
    out << format_double(budgets[i]) << ',' << format_double(r.flops) << ','
        << format_double(r.score) << ',';
    if (oracle_loss) out << format_double(oracle_loss(r.best));
    out << ',' << r.generation_found << '\n';
  }
  return out.str();
}

}  // namespace pathrank
