#include "pathrank/tokenizer.hpp"

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

namespace pathrank {

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  if (it == token_to_id.end())
    throw std::invalid_argument("token not in vocabulary: " + token);
  return it->second;
}

std::string operation_token(double width, double expand) {
  return "W" + format_ratio(width) + "_E" + format_ratio(expand);
}

Vocabulary build_vocabulary(const SearchSpace& space) {
  std::set<std::pair<double, double>> pairs;
  for (const auto& b : space.blocks)
    for (double w : b.width_choices)
      for (double e : b.expand_choices) pairs.emplace(w, e);
  Vocabulary v;
  v.id_to_token.push_back("SC");
  for (const auto& [w, e] : pairs) v.id_to_token.push_back(operation_token(w, e));
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  return nlohmann::json{{"tokens", vocab.id_to_token}};
}

Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  if (v.id_to_token.empty() || v.id_to_token[0] != "SC")
    throw std::invalid_argument("vocabulary must start with the SC token");
  return v;
}

TokenSequence tokenize(const SearchSpace& space, const Vocabulary& vocab,
                       const Path& path, int bucket) {
  const auto violations = path_violations(space, path);
  if (!violations.empty())
    throw std::invalid_argument("tokenize: invalid path: " + violations.front());
  TokenSequence seq;
  seq.bucket = bucket;
  int global_layer = 0;
  for (int b = 0; b < space.num_blocks(); ++b) {
    const auto& pb = path.blocks[b];
    const int max_layers = space.blocks[b].max_layers();
    const int active = static_cast<int>(pb.expands.size());
    for (int l = 0; l < max_layers; ++l) {
      if (l < active)
        seq.tokens.push_back(vocab.id(operation_token(pb.width, pb.expands[l])));
      else
        seq.tokens.push_back(kSkipTokenId);
      seq.layer_index.push_back(global_layer++);
      seq.block_index.push_back(b);
    }
  }
  return seq;
}

Eigen::VectorXd positional_encoding(int index, int dim, int max_index) {
  if (dim <= 0 || dim % 2 != 0)
    throw std::invalid_argument("positional encoding dim must be positive and even");
  if (index < 0) throw std::invalid_argument("positional encoding index must be >= 0");
  const double denom = max_index > 0 ? static_cast<double>(max_index) : 1.0;
  Eigen::VectorXd out(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, 2.0 * i / denom);
    out[2 * i] = std::sin(index / freq);
    out[2 * i + 1] = std::cos(index / freq);
  }
  return out;
}

Eigen::MatrixXd positional_encoding_table(int max_index, int dim) {
  Eigen::MatrixXd table(max_index + 1, dim);
  for (int idx = 0; idx <= max_index; ++idx)
    table.row(idx) = positional_encoding(idx, dim, max_index).transpose();
  return table;
}

}  // namespace pathrank
