#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <doctest.h>

#include "pathrank/oracle.hpp"
#include "pathrank/path_filter.hpp"
#include "pathrank/pipeline.hpp"
#include "test_util.hpp"

using namespace pathrank;

namespace {

SearchSpace two_block_space() {
  SearchSpace s;
  s.blocks = {make_block({0, 1, 2}, {0.65, 0.8, 1.0}, {0.2, 0.25, 0.35}),
              make_block({0, 1, 2}, {0.65, 0.8, 1.0}, {0.2, 0.25, 0.35})};
  s.base_channels = {16, 24};
  return s;
}

FilterConfig small_config() {
  FilterConfig c;
  c.model_dim = 32;
  c.num_heads = 2;
  c.num_encoder_layers = 2;
  c.ff_dim = 32;
  c.head_hidden = 32;
  return c;
}

// Fabricated records: build_pairs only reads bucket and target_loss.
ScoredPath rec(int bucket, double loss) {
  ScoredPath r;
  r.bucket = bucket;
  r.target_loss = loss;
  return r;
}

std::vector<ScoredPath> oracle_dataset(const SearchSpace& s, const BucketSpec& buckets,
                                       const SyntheticOracle& oracle, int m,
                                       std::uint64_t seed) {
  const SpaceView v = make_view(s);
  auto rng = make_rng(seed);
  return sample_scored_dataset(v, buckets, m, rng,
                               [&](const Path& p) { return oracle.eval(p); });
}

}  // namespace

TEST_CASE("pair_loss reproduces the three hand cases exactly") {
  CHECK(pair_loss(0.5, 0.5, +1) == 1.0);
  CHECK(pair_loss(1.5, 0.5, +1) == 0.0);
  CHECK(pair_loss(0.0, 0.5, +1) == 2.25);
}

TEST_CASE("pair_loss is antisymmetric under pair swap") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = d(rng), b = d(rng);
    const int s = (i % 2) ? +1 : -1;
    CHECK(pair_loss(a, b, s) == pair_loss(b, a, -s));
  }
  CHECK(pair_loss(0.3, 0.9, +1) > 0.0);
  CHECK(pair_loss(0.3, 0.9, -1) == doctest::Approx(0.16));
}

TEST_CASE("build_pairs on two same-bucket records orders by loss") {
  std::vector<ScoredPath> data = {rec(1, 0.5), rec(1, 0.3)};
  auto rng = make_rng(1);
  const auto pairs = build_pairs(data, SIZE_MAX, rng);
  REQUIRE(pairs.size() == 1);
  // Pair is (index 0, index 1) with sign -1: record 1 has the lower loss.
  CHECK(pairs[0].first == 0);
  CHECK(pairs[0].second == 1);
  CHECK(pairs[0].sign == -1);
}

TEST_CASE("build_pairs emits nothing across buckets") {
  std::vector<ScoredPath> data = {rec(0, 0.1), rec(1, 0.2), rec(2, 0.3), rec(3, 0.4)};
  auto rng = make_rng(1);
  CHECK(build_pairs(data, SIZE_MAX, rng).empty());
}

TEST_CASE("build_pairs yields B*m*(m-1)/2 pairs with m per bucket") {
  std::vector<ScoredPath> data;
  for (int b = 0; b < 5; ++b)
    for (int i = 0; i < 10; ++i) data.push_back(rec(b, 0.01 * double(10 * b + i)));
  auto rng = make_rng(1);
  const auto pairs = build_pairs(data, SIZE_MAX, rng);
  CHECK(pairs.size() == 5 * 45);
  for (const auto& p : pairs)
    CHECK(data[std::size_t(p.first)].bucket == data[std::size_t(p.second)].bucket);
}

TEST_CASE("build_pairs skips exact-tie losses") {
  std::vector<ScoredPath> data = {rec(0, 0.5), rec(0, 0.5), rec(0, 0.7)};
  auto rng = make_rng(1);
  const auto pairs = build_pairs(data, SIZE_MAX, rng);
  CHECK(pairs.size() == 2);  // (0,2) and (1,2); the tied pair is dropped
}

TEST_CASE("build_pairs caps per bucket with a uniform subsample") {
  std::vector<ScoredPath> data;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 20; ++i) data.push_back(rec(b, double(i) + 100.0 * b));
  auto rng = make_rng(1);
  const auto pairs = build_pairs(data, 50, rng);
  CHECK(pairs.size() == 100);  // 50 per bucket, 190 available each
  auto rng2 = make_rng(1);
  const auto again = build_pairs(data, 50, rng2);
  REQUIRE(again.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].first == again[i].first);
    CHECK(pairs[i].second == again[i].second);
  }
}

TEST_CASE("all-pairs mode ignores buckets (pairing ablation)") {
  std::vector<ScoredPath> data = {rec(0, 0.1), rec(1, 0.2), rec(2, 0.3)};
  auto rng = make_rng(1);
  CHECK(build_pairs(data, SIZE_MAX, rng, /*bucket_bounded=*/false).size() == 3);
}

TEST_CASE("scores are in (0,1), deterministic, and non-constant across paths") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  const PathFilter f = make_path_filter(s, buckets, small_config(), 12);
  const SpaceView v = make_view(s);
  auto rng = make_rng(55);
  std::vector<Path> paths;
  std::vector<int> bks;
  for (int i = 0; i < 100; ++i) {
    const Path p = sample_uniform(v, rng);
    paths.push_back(p);
    bks.push_back(bucket_of(buckets, path_flops(s, p)));
  }
  const Eigen::VectorXd scores = score_batch(f, paths, bks);
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    CHECK(scores(i) > 0.0);
    CHECK(scores(i) < 1.0);
  }
  const double mean = scores.mean();
  const double stdev = std::sqrt((scores.array() - mean).square().sum() / scores.size());
  CHECK(stdev > 0.0);
  // Bit-identical on repeat, batched or one at a time.
  const Eigen::VectorXd again = score_batch(f, paths, bks);
  CHECK((scores - again).cwiseAbs().maxCoeff() == 0.0);
  CHECK(score(f, paths[3], bks[3]) == scores(3));
}

TEST_CASE("tape forward matches the inference forward") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  for (bool bucket_emb : {true, false}) {
    for (bool block_pe : {true, false}) {
      FilterConfig cfg = small_config();
      cfg.use_bucket_embedding = bucket_emb;
      cfg.use_block_pe = block_pe;
      const PathFilter f = make_path_filter(s, buckets, cfg, 3);
      const SpaceView v = make_view(s);
      auto rng = make_rng(19);
      std::vector<Path> paths;
      std::vector<int> bks;
      for (int i = 0; i < 7; ++i) {
        const Path p = sample_uniform(v, rng);
        paths.push_back(p);
        bks.push_back(bucket_of(buckets, path_flops(s, p)));
      }
      ad::TapeD tape;
      std::vector<ad::VarD> pvars;
      for (const auto& p : f.params) pvars.push_back(tape.leaf(p));
      const ad::VarD scores = score_batch_tape(tape, pvars, f, paths, bks);
      const Eigen::VectorXd plain = score_batch(f, paths, bks);
      CHECK((scores.value().col(0) - plain).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("ablation switches change the score pathway") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  FilterConfig on = small_config();
  FilterConfig no_bucket = on;
  no_bucket.use_bucket_embedding = false;
  FilterConfig no_pe = on;
  no_pe.use_block_pe = false;
  const PathFilter f1 = make_path_filter(s, buckets, on, 5);
  const PathFilter f2 = make_path_filter(s, buckets, no_bucket, 5);
  const PathFilter f3 = make_path_filter(s, buckets, no_pe, 5);
  const SpaceView v = make_view(s);
  auto rng = make_rng(2);
  const Path p = sample_uniform(v, rng);
  const int b = bucket_of(buckets, path_flops(s, p));
  // Same seed, same tensors; only the forward pathway differs.
  CHECK(f1.params[1] == f2.params[1]);
  CHECK(score(f1, p, b) != score(f2, p, b));
  CHECK(score(f1, p, b) != score(f3, p, b));
  // With the bucket pathway off the bucket no longer moves the score.
  CHECK(score(f2, p, 0) == score(f2, p, buckets.num_buckets - 1));
}

TEST_CASE("full filter loss gradient agrees with finite differences") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 3);
  const PathFilter f = make_path_filter(s, buckets, small_config(), 77);
  const SpaceView v = make_view(s);
  auto rng = make_rng(6);
  std::vector<Path> paths;
  std::vector<int> bks;
  for (int i = 0; i < 6; ++i) {
    const Path p = sample_uniform(v, rng);
    paths.push_back(p);
    bks.push_back(bucket_of(buckets, path_flops(s, p)));
  }
  const std::vector<int> ia = {0, 2, 4}, ib = {1, 3, 5};
  Eigen::MatrixXd sgn(3, 1);
  sgn << 1, -1, 1;

  auto loss_of = [&](ad::TapeD& tape, const std::vector<ad::MatD>& params) {
    std::vector<ad::VarD> pvars;
    for (const auto& p : params) pvars.push_back(tape.leaf(p));
    ad::VarD scores = score_batch_tape(tape, pvars, f, paths, bks);
    ad::VarD diff = ad::sub(ad::gather_rows(scores, ia), ad::gather_rows(scores, ib));
    ad::VarD margin = ad::sub(tape.leaf(Eigen::MatrixXd::Ones(3, 1)),
                              ad::mul(tape.leaf(sgn), diff));
    ad::VarD hinge = ad::relu(margin);
    return std::pair{pvars, ad::mean_all(ad::mul(hinge, hinge))};
  };

  ad::TapeD tape;
  auto [pvars, loss] = loss_of(tape, f.params);
  tape.backward(loss);
  std::vector<ad::MatD> grads;
  for (const auto& pv : pvars) grads.push_back(tape.grad(pv));

  auto eval = [&](const std::vector<ad::MatD>& params) {
    ad::TapeD t;
    return loss_of(t, params).second.value()(0, 0);
  };

  std::mt19937_64 coord_rng(99);
  std::vector<test_util::Coord> coords;
  for (std::size_t pi = 0; pi < f.params.size(); ++pi)
    for (int k = 0; k < 4; ++k)
      coords.push_back({pi,
                        static_cast<Eigen::Index>(coord_rng() % std::uint64_t(f.params[pi].rows())),
                        static_cast<Eigen::Index>(coord_rng() % std::uint64_t(f.params[pi].cols()))});
  CHECK(test_util::max_grad_rel_err(eval, f.params, grads, coords) < 1e-4);
}

TEST_CASE("filter learns a teacher's ranking; shuffled labels stay at chance") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  const PathFilter teacher = make_path_filter(s, buckets, small_config(), 900);
  const SpaceView v = make_view(s);

  auto teacher_eval = [&](const Path& p) {
    const double fl = path_flops(s, p);
    return 1.0 - score(teacher, p, bucket_of(buckets, fl));
  };
  auto rng = make_rng(41);
  auto train_data = sample_scored_dataset(v, buckets, 50, rng, teacher_eval);
  auto test_data = sample_scored_dataset(v, buckets, 20, rng, teacher_eval);

  TrainConfig tc;
  tc.seed = 7;
  tc.max_epochs = 120;
  tc.patience = 20;
  tc.max_pairs_per_bucket = 500;

  PathFilter student = make_path_filter(s, buckets, small_config(), 1);
  const TrainResult tr = train_filter(student, train_data, tc);
  CHECK(tr.best_epoch >= 0);
  CHECK(tr.train_pairs > 0);

  auto pair_rng = make_rng(8);
  const auto test_pairs = build_pairs(test_data, 300, pair_rng);
  const double acc = pair_accuracy(student, test_data, test_pairs);
  CHECK(acc > 0.9);

  // Null control: randomized labels carry no ranking information, so
  // held-out accuracy on equally randomized labels sits at chance.
  auto shuffle_labels = [](std::vector<ScoredPath> d, std::uint64_t seed) {
    std::vector<double> losses;
    for (const auto& r : d) losses.push_back(r.target_loss);
    auto rng = make_rng(seed);
    std::shuffle(losses.begin(), losses.end(), rng);
    for (std::size_t i = 0; i < d.size(); ++i) d[i].target_loss = losses[i];
    return d;
  };
  const auto null_train = shuffle_labels(train_data, 123);
  const auto null_test = shuffle_labels(test_data, 124);
  PathFilter null_student = make_path_filter(s, buckets, small_config(), 1);
  TrainConfig nc = tc;
  nc.max_epochs = 40;
  train_filter(null_student, null_train, nc);
  auto null_pair_rng = make_rng(9);
  const auto null_pairs = build_pairs(null_test, 300, null_pair_rng);
  const double null_acc = pair_accuracy(null_student, null_test, null_pairs);
  CHECK(null_acc > 0.45);
  CHECK(null_acc < 0.55);
}

TEST_CASE("training throws without trainable pairs") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  PathFilter f = make_path_filter(s, buckets, small_config(), 1);
  std::vector<ScoredPath> one = {rec(0, 0.5)};
  one[0].path = all_min_path(s);
  CHECK_THROWS_AS(train_filter(f, one, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("bucket-embedding ablation leaves the bucket table untrained") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  const SyntheticOracle oracle(s, OracleConfig{.seed = 31});
  const auto data = oracle_dataset(s, buckets, oracle, 12, 60);

  FilterConfig cfg = small_config();
  cfg.use_bucket_embedding = false;
  PathFilter f = make_path_filter(s, buckets, cfg, 5);
  const ad::MatD bucket_before = f.params[1];
  const ad::MatD token_before = f.params[0];
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.patience = 3;
  train_filter(f, data, tc);
  CHECK(f.params[1] == bucket_before);  // untouched pathway
  CHECK(f.params[0] != token_before);   // live pathway trained

  // And with the pathway on, the bucket table does train.
  PathFilter g = make_path_filter(s, buckets, small_config(), 5);
  const ad::MatD bucket_init = g.params[1];
  train_filter(g, data, tc);
  CHECK(g.params[1] != bucket_init);
}

TEST_CASE("weak detection metrics are exact for a perfect scorer") {
  std::vector<ScoredPath> data;
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int b = 0; b < 5; ++b)
    for (int i = 0; i < 40; ++i) data.push_back(rec(b, d(rng)));
  Eigen::VectorXd scores(data.size());
  double max_loss = 0;
  for (const auto& r : data) max_loss = std::max(max_loss, r.target_loss);
  for (std::size_t i = 0; i < data.size(); ++i)
    scores(static_cast<Eigen::Index>(i)) = 1.0 - data[i].target_loss / (max_loss + 1e-9);
  const DetectionMetrics m = weak_detection_from_scores(data, scores, 0.25);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.accuracy == 1.0);
  CHECK(m.true_weak == 5 * 10);
}

TEST_CASE("weak detection counts match the per-bucket floor rule") {
  std::vector<ScoredPath> data;
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 7; ++i) data.push_back(rec(b, double(i)));
  Eigen::VectorXd scores = Eigen::VectorXd::LinSpaced(21, 0.9, 0.1);
  const DetectionMetrics m = weak_detection_from_scores(data, scores, 0.3);
  CHECK(m.true_weak == 3 * 2);  // floor(0.3*7) = 2 per bucket
  CHECK(m.predicted_weak == 3 * 2);
}

TEST_CASE("one trained filter serves several detection ratios") {
  const SearchSpace s = two_block_space();
  const BucketSpec buckets = make_buckets(s, 5);
  const SyntheticOracle oracle(s, OracleConfig{.seed = 77});
  const auto data = oracle_dataset(s, buckets, oracle, 20, 90);
  const PathFilter f = make_path_filter(s, buckets, small_config(), 3);
  const Eigen::VectorXd scores = score_dataset(f, data);
  for (double r : {0.2, 0.3, 0.4}) {
    const DetectionMetrics m = weak_detection_from_scores(data, scores, r);
    CHECK(m.precision >= 0.0);
    CHECK(m.precision <= 1.0);
    CHECK(m.true_weak > 0);
  }
}
