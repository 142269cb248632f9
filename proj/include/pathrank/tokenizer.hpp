#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "pathrank/arch_space.hpp"

namespace pathrank {

inline constexpr int kSkipTokenId = 0;

// Token ids for "W{w}_E{e}" strings plus the skip token "SC" (id 0).
// Built from a space's width/expand choice sets, sorted, so the mapping is
// stable across runs for a given config.
struct Vocabulary {
  std::map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id(const std::string& token) const;
};

std::string operation_token(double width, double expand);

Vocabulary build_vocabulary(const SearchSpace& space);

nlohmann::json vocabulary_to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const nlohmann::json& j);

// Fixed-length model input: one token per layer slot of the space
// (inactive slots hold the skip token), a global layer index, the owning
// block index, and the path's FLOPs bucket.
struct TokenSequence {
  std::vector<int> tokens;
  std::vector<int> layer_index;
  std::vector<int> block_index;
  int bucket = 0;
};

TokenSequence tokenize(const SearchSpace& space, const Vocabulary& vocab,
                       const Path& path, int bucket);

// Sinusoidal position code: P(2i) = sin(idx / 10000^(2i/max_index)),
// P(2i+1) = cos of the same argument. max_index is the largest index the
// table is built for (a zero max_index degenerates to exponent 0).
Eigen::VectorXd positional_encoding(int index, int dim, int max_index);

// Rows 0..max_index of positional_encoding stacked into a table.
Eigen::MatrixXd positional_encoding_table(int max_index, int dim);

}  // namespace pathrank
