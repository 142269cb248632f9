#pragma once

#include <cstdint>
#include <vector>

#include "pathrank/arch_space.hpp"

namespace pathrank {

struct OracleConfig {
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  double interaction_scale = 0.05;
};

// Deterministic analytic stand-in for validation loss. Loss = C minus a sum
// of per-choice utilities (strictly increasing in width, expand, and layer
// activity) minus non-negative pairwise block interactions, plus noise
// frozen by the path's canonical serialization — so capacity-increasing
// moves strictly help in the noise-free configuration, and any path's value
// never changes.
class SyntheticOracle {
 public:
  SyntheticOracle(const SearchSpace& space, OracleConfig config);

  double eval(const Path& path) const;
  const SearchSpace& space() const { return space_; }
  const OracleConfig& config() const { return config_; }

 private:
  double utility(int block, int layer, int width_idx, int expand_idx) const;

  SearchSpace space_;
  OracleConfig config_;
  // Strictly increasing positive ladders per (block, layer).
  std::vector<std::vector<std::vector<double>>> width_ladder_;   // [b][l][wi]
  std::vector<std::vector<std::vector<double>>> expand_ladder_;  // [b][l][ei]
  std::vector<std::vector<double>> layer_base_;                  // [b][l]
  std::vector<std::vector<double>> cross_;  // upper-triangular block coupling
  double ceiling_ = 0.0;
};

}  // namespace pathrank
