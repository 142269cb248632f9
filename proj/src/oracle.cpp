#include "pathrank/oracle.hpp"

#include <cmath>
#include <stdexcept>

#include "pathrank/common.hpp"

namespace pathrank {

namespace {

// Strictly increasing ladder of positive values: cumulative sums of draws
// bounded away from zero.
std::vector<double> ladder(std::size_t n, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.5, 1.5);
  std::vector<double> out(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += d(rng) * scale;
    out[i] = acc;
  }
  return out;
}

}  // namespace

SyntheticOracle::SyntheticOracle(const SearchSpace& space, OracleConfig config)
    : space_(space), config_(config) {
  validate_space(space_);
  auto rng = make_rng(derive_seed(config_.seed, "oracle.tables"));
  const double scale = 1.0 / double(space_.total_max_layers());
  std::uniform_real_distribution<double> base_d(0.5, 1.5);
  std::uniform_real_distribution<double> cross_d(0.0, 1.0);

  for (int b = 0; b < space_.num_blocks(); ++b) {
    const auto& blk = space_.blocks[b];
    width_ladder_.emplace_back();
    expand_ladder_.emplace_back();
    layer_base_.emplace_back();
    for (int l = 0; l < blk.max_layers(); ++l) {
      width_ladder_[b].push_back(ladder(blk.width_choices.size(), scale, rng));
      expand_ladder_[b].push_back(ladder(blk.expand_choices.size(), scale, rng));
      layer_base_[b].push_back(base_d(rng) * scale);
    }
  }
  for (int b = 0; b < space_.num_blocks(); ++b) {
    cross_.emplace_back();
    for (int b2 = 0; b2 < space_.num_blocks(); ++b2)
      cross_[b].push_back(b2 > b ? cross_d(rng) * config_.interaction_scale : 0.0);
  }

  // Ceiling above the best achievable total keeps losses positive.
  double best = 0.0;
  for (int b = 0; b < space_.num_blocks(); ++b) {
    const auto& blk = space_.blocks[b];
    for (int l = 0; l < blk.max_layers(); ++l)
      best += utility(b, l, static_cast<int>(blk.width_choices.size()) - 1,
                      static_cast<int>(blk.expand_choices.size()) - 1);
    for (int b2 = b + 1; b2 < space_.num_blocks(); ++b2) best += cross_[b][b2];
  }
  ceiling_ = best + 0.5;
}

double SyntheticOracle::utility(int block, int layer, int width_idx, int expand_idx) const {
  const double w = width_ladder_[block][layer][width_idx];
  const double e = expand_ladder_[block][layer][expand_idx];
  return layer_base_[block][layer] + w + e + 0.25 * w * e;
}

double SyntheticOracle::eval(const Path& path) const {
  const auto violations = path_violations(space_, path);
  if (!violations.empty())
    throw std::invalid_argument("oracle eval: " + violations.front());

  double total = 0.0;
  std::vector<double> width_frac(path.blocks.size());
  for (std::size_t b = 0; b < path.blocks.size(); ++b) {
    const auto& blk = space_.blocks[b];
    const auto& pb = path.blocks[b];
    const int wi = static_cast<int>(
        std::find(blk.width_choices.begin(), blk.width_choices.end(), pb.width) -
        blk.width_choices.begin());
    width_frac[b] = blk.width_choices.size() > 1
                        ? double(wi) / double(blk.width_choices.size() - 1)
                        : 1.0;
    for (std::size_t l = 0; l < pb.expands.size(); ++l) {
      const int ei = static_cast<int>(
          std::find(blk.expand_choices.begin(), blk.expand_choices.end(), pb.expands[l]) -
          blk.expand_choices.begin());
      total += utility(static_cast<int>(b), static_cast<int>(l), wi, ei);
    }
  }
  // Non-negative coupling, monotone in each block's width level.
  for (std::size_t b = 0; b < path.blocks.size(); ++b)
    for (std::size_t b2 = b + 1; b2 < path.blocks.size(); ++b2)
      total += cross_[b][b2] * width_frac[b] * width_frac[b2];

  double noise = 0.0;
  if (config_.noise_std > 0.0) {
    const std::uint64_t h = fnv1a64(path_to_string(path)) ^ config_.seed;
    // Box-Muller on two splitmix streams: frozen standard normal per path.
    const double u1 =
        (double(splitmix64(h) >> 11) + 0.5) / 9007199254740992.0;  // (0,1)
    const double u2 = (double(splitmix64(h + 1) >> 11) + 0.5) / 9007199254740992.0;
    noise = config_.noise_std * std::sqrt(-2.0 * std::log(u1)) *
            std::cos(2.0 * 3.14159265358979323846 * u2);
  }
  return ceiling_ - total + noise;
}

}  // namespace pathrank
