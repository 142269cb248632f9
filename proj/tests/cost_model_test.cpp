#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "pathrank/arch_space.hpp"
#include "pathrank/cost_model.hpp"

using namespace pathrank;

namespace {

// Independent recomputation of the bottleneck cost used as the oracle here:
// 1x1 reduce + 3x3 + 1x1 expand at the block's spatial area, 2 FLOPs per MAC.
double oracle_layer_mflops(int resolution, int block, double base_channels, double width,
                           double expand) {
  int side = resolution >> (block + 2);
  if (side < 1) side = 1;
  const double area = double(side) * side;
  const double c = base_channels * width;
  const double inner = expand * c;
  const double macs = area * (c * inner + 9.0 * inner * inner + inner * c);
  return 2.0 * macs / 1e6;
}

SearchSpace small_space() {
  SearchSpace s;
  s.blocks = {make_block({0, 1}, {0.5, 1.0}, {0.25, 0.5}),
              make_block({0, 1}, {0.5, 1.0}, {0.25, 0.5})};
  s.base_channels = {16, 24};
  return s;
}

}  // namespace

TEST_CASE("per-layer cost matches the independent closed form") {
  const SearchSpace s = default_search_space();
  auto rng = make_rng(31);
  std::uniform_int_distribution<int> bd(0, s.num_blocks() - 1);
  for (int i = 0; i < 50; ++i) {
    const int b = bd(rng);
    const auto& blk = s.blocks[b];
    const double w = blk.width_choices[i % blk.width_choices.size()];
    const double e = blk.expand_choices[i % blk.expand_choices.size()];
    const double got = operation_flops(s, b, 0, w, e);
    const double want =
        oracle_layer_mflops(s.input_resolution, b, s.base_channels[b], w, e);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("all-min path costs strictly less than all-max") {
  const SearchSpace s = default_search_space();
  const double lo = path_flops(s, all_min_path(s));
  const double hi = path_flops(s, all_max_path(s));
  CHECK(lo < hi);
  CHECK(lo > 0.0);
}

TEST_CASE("doubling base channels scales every layer cost by 4") {
  SearchSpace s = small_space();
  SearchSpace s2 = s;
  for (auto& c : s2.base_channels) c *= 2;
  const SpaceView v = make_view(s);
  auto paths = enumerate_paths_vec(v, 100000);
  for (std::size_t i = 0; i < paths.size(); i += 7) {
    const auto r1 = path_flops_report(s, paths[i]);
    const auto r2 = path_flops_report(s2, paths[i]);
    CHECK(r2.total == doctest::Approx(4.0 * r1.total).epsilon(1e-12));
    for (std::size_t b = 0; b < r1.per_layer.size(); ++b)
      for (std::size_t l = 0; l < r1.per_layer[b].size(); ++l)
        CHECK(r2.per_layer[b][l] == doctest::Approx(4.0 * r1.per_layer[b][l]).epsilon(1e-12));
  }
}

TEST_CASE("inactive layers cost zero") {
  const SearchSpace s = default_search_space();
  const Path p = all_min_path(s);  // depth 0 everywhere: 2 active of 4 slots
  const auto rep = path_flops_report(s, p);
  for (std::size_t b = 0; b < rep.per_layer.size(); ++b) {
    REQUIRE(rep.per_layer[b].size() == 4);
    CHECK(rep.per_layer[b][2] == 0.0);
    CHECK(rep.per_layer[b][3] == 0.0);
    CHECK(rep.per_layer[b][0] > 0.0);
  }
}

TEST_CASE("report totals are consistent") {
  const SearchSpace s = default_search_space();
  const SpaceView v = make_view(s);
  auto rng = make_rng(5);
  for (int i = 0; i < 30; ++i) {
    const auto rep = path_flops_report(s, sample_uniform(v, rng));
    double block_sum = 0;
    for (double b : rep.per_block) block_sum += b;
    CHECK(rep.total == doctest::Approx(block_sum).epsilon(1e-9));
    for (std::size_t b = 0; b < rep.per_layer.size(); ++b) {
      double layer_sum = 0;
      for (double l : rep.per_layer[b]) layer_sum += l;
      CHECK(rep.per_block[b] == doctest::Approx(layer_sum).epsilon(1e-9));
    }
  }
}

TEST_CASE("path_flops rejects invalid paths") {
  const SearchSpace s = default_search_space();
  Path p = all_max_path(s);
  p.blocks[0].width = 0.7;
  CHECK_THROWS_AS(path_flops(s, p), std::invalid_argument);
}

TEST_CASE("operation cost is monotone in expand and linear per conv term") {
  SearchSpace s = default_search_space();
  s.blocks[1] = make_block({0, 1, 2}, {0.65, 0.8, 1.0}, {0.2, 0.25, 0.4});
  const double e = 0.2;
  const double f1 = operation_flops(s, 1, 0, 0.8, e);
  const double f2 = operation_flops(s, 1, 0, 0.8, 2 * e);
  CHECK(f2 > f1);
  // Split into the two 1x1 terms (linear in expand) and the 3x3 term
  // (quadratic): f(2e) = 2*linear + 4*quad.
  const double c = s.base_channels[1] * 0.8;
  int side = s.input_resolution >> 3;
  const double area = double(side) * side;
  const double linear = 2.0 * area * 2.0 * (c * (e * c)) / 1e6;
  const double quad = 2.0 * area * 9.0 * (e * c) * (e * c) / 1e6;
  CHECK(f1 == doctest::Approx(linear + quad).epsilon(1e-12));
  CHECK(f2 == doctest::Approx(2 * linear + 4 * quad).epsilon(1e-12));
}

TEST_CASE("coordinate monotonicity holds on 1000 random perturbation pairs") {
  const SearchSpace s = default_search_space();
  const SpaceView v = make_view(s);
  auto rng = make_rng(1234);
  std::uniform_int_distribution<int> bd(0, s.num_blocks() - 1), cd(0, 2);
  int done = 0;
  while (done < 1000) {
    Path p = sample_uniform(v, rng);
    Path q = p;
    const int b = bd(rng);
    const auto& blk = s.blocks[b];
    const int coord = cd(rng);
    if (coord == 0) {  // bump depth
      auto it = std::find(blk.depth_choices.begin(), blk.depth_choices.end(),
                          q.blocks[b].depth);
      if (it + 1 == blk.depth_choices.end()) continue;
      q.blocks[b].depth = *(it + 1);
      q.blocks[b].expands.resize(blk.layers_for_depth(q.blocks[b].depth),
                                 blk.expand_choices.front());
    } else if (coord == 1) {  // bump width
      auto it = std::find(blk.width_choices.begin(), blk.width_choices.end(),
                          q.blocks[b].width);
      if (it + 1 == blk.width_choices.end()) continue;
      q.blocks[b].width = *(it + 1);
    } else {  // bump one expand
      std::uniform_int_distribution<std::size_t> ld(0, q.blocks[b].expands.size() - 1);
      const std::size_t l = ld(rng);
      auto it = std::find(blk.expand_choices.begin(), blk.expand_choices.end(),
                          q.blocks[b].expands[l]);
      if (it + 1 == blk.expand_choices.end()) continue;
      q.blocks[b].expands[l] = *(it + 1);
    }
    CHECK(path_flops(s, q) > path_flops(s, p));
    ++done;
  }
}

TEST_CASE("equal-width bucket edges match the arithmetic example") {
  const BucketSpec spec = equal_width_buckets(100.0, 200.0, 5);
  const auto e = spec.edges();
  REQUIRE(e.size() == 6);
  const std::vector<double> want = {100, 120, 140, 160, 180, 200};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(e[i] == doctest::Approx(want[i]));
  CHECK(bucket_of(spec, 100.0) == 0);
  CHECK(bucket_of(spec, 200.0) == 4);
  CHECK(bucket_of(spec, 150.0) == 2);
  CHECK(bucket_of(spec, 120.0) == 1);  // boundary joins the interval it opens
  CHECK(spec.upper_edge(2) == doctest::Approx(160.0));
}

TEST_CASE("bucket widths are equal and cover the range") {
  const SearchSpace s = default_search_space();
  const BucketSpec spec = make_buckets(s, 5);
  const auto e = spec.edges();
  const double w0 = e[1] - e[0];
  double total = 0;
  for (std::size_t k = 0; k + 1 < e.size(); ++k) {
    CHECK(e[k + 1] - e[k] == doctest::Approx(w0).epsilon(1e-12));
    total += e[k + 1] - e[k];
  }
  CHECK(total == doctest::Approx(spec.max_flops - spec.min_flops).epsilon(1e-12));
  CHECK(e.front() == spec.min_flops);
  CHECK(e.back() == spec.max_flops);
}

TEST_CASE("B=1 puts every path in bucket 0") {
  const SearchSpace s = small_space();
  const BucketSpec spec = make_buckets(s, 1);
  auto paths = enumerate_paths_vec(make_view(s), 100000);
  for (const auto& p : paths) CHECK(bucket_of(spec, path_flops(s, p)) == 0);
}

TEST_CASE("every enumerated path lands inside the bucket range") {
  const SearchSpace s = small_space();
  const BucketSpec spec = make_buckets(s, 5);
  auto paths = enumerate_paths_vec(make_view(s), 100000);
  for (const auto& p : paths) {
    const double f = path_flops(s, p);
    CHECK(f >= spec.min_flops);
    CHECK(f <= spec.max_flops);
    const int k = bucket_of(spec, f);
    CHECK(k >= 0);
    CHECK(k < spec.num_buckets);
  }
}

TEST_CASE("bucket_of rejects out-of-range flops") {
  const BucketSpec spec = equal_width_buckets(100.0, 200.0, 5);
  CHECK_THROWS_AS(bucket_of(spec, 99.9), std::out_of_range);
  CHECK_THROWS_AS(bucket_of(spec, 200.1), std::out_of_range);
}

TEST_CASE("bucket spec JSON round trip") {
  const BucketSpec spec = equal_width_buckets(12.5, 87.25, 7);
  const BucketSpec back = bucket_spec_from_json(bucket_spec_to_json(spec));
  CHECK(back.num_buckets == spec.num_buckets);
  CHECK(back.min_flops == spec.min_flops);
  CHECK(back.max_flops == spec.max_flops);
}
