#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "pathrank/tokenizer.hpp"

using namespace pathrank;

TEST_CASE("vocabulary covers W x E plus the skip token") {
  const SearchSpace s = default_search_space();
  const Vocabulary v = build_vocabulary(s);
  CHECK(v.size() == 3 * 3 + 1);
  CHECK(v.id("SC") == kSkipTokenId);
  CHECK(v.id("W1.0_E0.25") > 0);
  // Bijective: every id maps back to its token.
  for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.id_to_token[i]) == i);
}

TEST_CASE("operation tokens render ratios in minimal decimal form") {
  CHECK(operation_token(1.0, 0.25) == "W1.0_E0.25");
  CHECK(operation_token(0.65, 0.2) == "W0.65_E0.2");
  CHECK(operation_token(0.8, 0.35) == "W0.8_E0.35");
}

TEST_CASE("a depth-0 block tokenizes to two ops and two skips") {
  SearchSpace s;
  s.blocks = {make_block({0, 1, 2}, {0.65, 1.0}, {0.2, 0.25, 0.35})};
  s.base_channels = {16};
  const Vocabulary v = build_vocabulary(s);

  Path p;
  p.blocks = {{0, 1.0, {0.25, 0.35}}};
  const TokenSequence seq = tokenize(s, v, p, 0);
  REQUIRE(seq.tokens.size() == 4);
  CHECK(seq.tokens[0] == v.id("W1.0_E0.25"));
  CHECK(seq.tokens[1] == v.id("W1.0_E0.35"));
  CHECK(seq.tokens[2] == kSkipTokenId);
  CHECK(seq.tokens[3] == kSkipTokenId);
}

TEST_CASE("max-depth blocks contain no skip tokens") {
  const SearchSpace s = default_search_space();
  const Vocabulary v = build_vocabulary(s);
  Path p;
  for (const auto& blk : s.blocks) {
    PathBlock pb;
    pb.depth = blk.depth_choices.back();
    pb.width = blk.width_choices.back();
    pb.expands.assign(blk.layers_for_depth(pb.depth), blk.expand_choices.front());
    p.blocks.push_back(pb);
  }
  const TokenSequence seq = tokenize(s, v, p, 2);
  for (int t : seq.tokens) CHECK(t != kSkipTokenId);
  CHECK(seq.bucket == 2);
}

TEST_CASE("sequences carry global layer indices and per-position block indices") {
  const SearchSpace s = default_search_space();
  const Vocabulary v = build_vocabulary(s);
  const SpaceView view = make_view(s);
  auto rng = make_rng(3);
  const Path p = sample_uniform(view, rng);
  const TokenSequence seq = tokenize(s, v, p, 0);
  const int L = s.total_max_layers();
  REQUIRE(static_cast<int>(seq.tokens.size()) == L);
  for (int i = 0; i < L; ++i) CHECK(seq.layer_index[i] == i);
  CHECK(seq.block_index.front() == 0);
  CHECK(seq.block_index.back() == s.num_blocks() - 1);
  // Block index is non-decreasing and spans exactly max_layers per block.
  int pos = 0;
  for (int b = 0; b < s.num_blocks(); ++b)
    for (int l = 0; l < s.blocks[b].max_layers(); ++l, ++pos)
      CHECK(seq.block_index[pos] == b);
}

TEST_CASE("tokenization is injective over an enumerable space") {
  SearchSpace s;
  s.blocks = {make_block({0, 1}, {0.5, 1.0}, {0.25, 0.5}),
              make_block({0, 1}, {0.5, 1.0}, {0.25, 0.5})};
  s.base_channels = {16, 24};
  const Vocabulary v = build_vocabulary(s);
  auto paths = enumerate_paths_vec(make_view(s), 100000);
  std::set<std::vector<int>> seqs;
  for (const auto& p : paths) seqs.insert(tokenize(s, v, p, 0).tokens);
  CHECK(seqs.size() == paths.size());
}

TEST_CASE("sequence length is fixed across all paths of a space") {
  const SearchSpace s = default_search_space();
  const Vocabulary v = build_vocabulary(s);
  const SpaceView view = make_view(s);
  auto rng = make_rng(8);
  const std::size_t L = static_cast<std::size_t>(s.total_max_layers());
  for (int i = 0; i < 50; ++i)
    CHECK(tokenize(s, v, sample_uniform(view, rng), 0).tokens.size() == L);
}

TEST_CASE("positional encoding at index 0 alternates 0 and 1") {
  const Eigen::VectorXd e = positional_encoding(0, 8, 15);
  for (int i = 0; i < 8; i += 2) {
    CHECK(e[i] == doctest::Approx(0.0));
    CHECK(e[i + 1] == doctest::Approx(1.0));
  }
}

TEST_CASE("positional encoding component 0 is sin(index)") {
  for (int l : {1, 2, 5, 11}) {
    const Eigen::VectorXd e = positional_encoding(l, 6, 15);
    CHECK(e[0] == doctest::Approx(std::sin(double(l))));
    CHECK(e[1] == doctest::Approx(std::cos(double(l))));
  }
}

TEST_CASE("positional encoding uses max_index in the frequency exponent") {
  const int l = 5, max_l = 15;
  const Eigen::VectorXd e = positional_encoding(l, 8, max_l);
  for (int i = 0; 2 * i < 8; ++i) {
    const double freq = std::pow(10000.0, (2.0 * i) / max_l);
    CHECK(e[2 * i] == doctest::Approx(std::sin(l / freq)));
    CHECK(e[2 * i + 1] == doctest::Approx(std::cos(l / freq)));
  }
}

TEST_CASE("positional encoding stays within [-1, 1]") {
  for (int l = 0; l <= 20; ++l) {
    const Eigen::VectorXd e = positional_encoding(l, 128, 20);
    CHECK(e.maxCoeff() <= 1.0);
    CHECK(e.minCoeff() >= -1.0);
  }
}

TEST_CASE("positional encoding rejects odd dimensions") {
  CHECK_THROWS_AS(positional_encoding(0, 7, 10), std::invalid_argument);
}

TEST_CASE("encoding table rows match single-index calls") {
  const Eigen::MatrixXd table = positional_encoding_table(10, 16);
  REQUIRE(table.rows() == 11);
  for (int l = 0; l <= 10; ++l) {
    const Eigen::VectorXd e = positional_encoding(l, 16, 10);
    CHECK((table.row(l).transpose() - e).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }
}

TEST_CASE("vocabulary JSON round trip") {
  const SearchSpace s = default_search_space();
  const Vocabulary v = build_vocabulary(s);
  const Vocabulary w = vocabulary_from_json(vocabulary_to_json(v));
  CHECK(w.size() == v.size());
  CHECK(w.id_to_token == v.id_to_token);
}
