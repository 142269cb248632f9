#include "pathrank/path_filter.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "pathrank/common.hpp"
#include "pathrank/optimizer.hpp"

namespace pathrank {

namespace {

// Deterministic parameter layout; indices recomputed from the config so
// checkpoints only need the tensors in order.
struct EncoderIndex {
  int wq, bq, wk, bk, wv, bv, wo, bo;
  int w1, b1, w2, b2;
};

struct ParamIndex {
  int token_emb = 0;
  int bucket_emb = 1;
  std::vector<EncoderIndex> enc;
  int head_w1 = 0, head_b1 = 0, head_w2 = 0, head_b2 = 0;
};

ParamIndex layout(const FilterConfig& cfg) {
  ParamIndex ix;
  int next = 2;
  for (int l = 0; l < cfg.num_encoder_layers; ++l) {
    EncoderIndex e;
    e.wq = next++;
    e.bq = next++;
    e.wk = next++;
    e.bk = next++;
    e.wv = next++;
    e.bv = next++;
    e.wo = next++;
    e.bo = next++;
    e.w1 = next++;
    e.b1 = next++;
    e.w2 = next++;
    e.b2 = next++;
    ix.enc.push_back(e);
  }
  ix.head_w1 = next++;
  ix.head_b1 = next++;
  ix.head_w2 = next++;
  ix.head_b2 = next++;
  return ix;
}

ad::MatD init_weight(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(in));
  std::uniform_real_distribution<double> d(-bound, bound);
  ad::MatD m(in, out);
  for (Eigen::Index r = 0; r < in; ++r)
    for (Eigen::Index c = 0; c < out; ++c) m(r, c) = d(rng);
  return m;
}

ad::MatD init_embedding(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 0.02);
  ad::MatD m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d(rng);
  return m;
}

void softmax_rows_inplace(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
}

void layer_norm_rows_inplace(Eigen::MatrixXd& m, double eps = 1e-12) {
  const Eigen::Index n = m.cols();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mean = m.row(r).mean();
    const double var = (m.row(r).array() - mean).square().sum() / double(n);
    const double s = 1.0 / std::sqrt(var + eps);
    m.row(r) = ((m.row(r).array() - mean) * s).matrix();
  }
}

// Stacked token-embedding + positional input for a batch of paths.
Eigen::MatrixXd batch_input(const PathFilter& f, const std::vector<Path>& paths,
                            const std::vector<int>& buckets, std::vector<int>* all_tokens,
                            std::vector<int>* bucket_ids) {
  if (paths.size() != buckets.size())
    throw std::invalid_argument("score_batch: paths/buckets size mismatch");
  const int L = f.seq_len();
  const int d = f.config.model_dim;
  Eigen::MatrixXd pe(L, d);
  for (int l = 0; l < L; ++l) pe.row(l) = f.layer_pe.row(l);
  Eigen::MatrixXd x(Eigen::Index(paths.size()) * L, d);
  for (std::size_t n = 0; n < paths.size(); ++n) {
    if (buckets[n] < 0 || buckets[n] >= f.buckets.num_buckets)
      throw std::invalid_argument("score_batch: bucket out of range");
    const TokenSequence seq = tokenize(f.space, f.vocab, paths[n], buckets[n]);
    for (int l = 0; l < L; ++l) {
      const int tok = seq.tokens[l];
      x.row(Eigen::Index(n) * L + l) = f.params[0].row(tok) + pe.row(l);
      if (f.config.use_block_pe)
        x.row(Eigen::Index(n) * L + l) += f.block_pe.row(seq.block_index[l]);
      if (all_tokens) all_tokens->push_back(tok);
    }
    if (bucket_ids) bucket_ids->push_back(buckets[n]);
  }
  return x;
}

}  // namespace

PathFilter make_path_filter(const SearchSpace& space, const BucketSpec& buckets,
                            const FilterConfig& config, std::uint64_t seed) {
  if (config.model_dim % config.num_heads != 0)
    throw std::invalid_argument("model_dim must divide evenly into heads");
  validate_space(space);
  PathFilter f;
  f.config = config;
  f.space = space;
  f.vocab = build_vocabulary(space);
  f.buckets = buckets;
  const int L = space.total_max_layers();
  f.layer_pe = positional_encoding_table(L - 1, config.model_dim);
  f.block_pe = positional_encoding_table(space.num_blocks() - 1, config.model_dim);

  auto rng = make_rng(seed);
  const int d = config.model_dim;
  auto add = [&](const std::string& name, ad::MatD m) {
    f.param_names.push_back(name);
    f.params.push_back(std::move(m));
  };
  add("token_embedding", init_embedding(f.vocab.size(), d, rng));
  add("bucket_embedding", init_embedding(buckets.num_buckets, d, rng));
  for (int l = 0; l < config.num_encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l) + ".";
    add(p + "attn.wq", init_weight(d, d, rng));
    add(p + "attn.bq", ad::MatD::Zero(1, d));
    add(p + "attn.wk", init_weight(d, d, rng));
    add(p + "attn.bk", ad::MatD::Zero(1, d));
    add(p + "attn.wv", init_weight(d, d, rng));
    add(p + "attn.bv", ad::MatD::Zero(1, d));
    add(p + "attn.wo", init_weight(d, d, rng));
    add(p + "attn.bo", ad::MatD::Zero(1, d));
    add(p + "ff.w1", init_weight(d, config.ff_dim, rng));
    add(p + "ff.b1", ad::MatD::Zero(1, config.ff_dim));
    add(p + "ff.w2", init_weight(config.ff_dim, d, rng));
    add(p + "ff.b2", ad::MatD::Zero(1, d));
  }
  add("head.w1", init_weight(2 * d, config.head_hidden, rng));
  add("head.b1", ad::MatD::Zero(1, config.head_hidden));
  add("head.w2", init_weight(config.head_hidden, 1, rng));
  add("head.b2", ad::MatD::Zero(1, 1));
  return f;
}

std::size_t parameter_count(const PathFilter& f) {
  std::size_t n = 0;
  for (const auto& p : f.params) n += static_cast<std::size_t>(p.size());
  return n;
}

Eigen::VectorXd score_batch(const PathFilter& f, const std::vector<Path>& paths,
                            const std::vector<int>& buckets) {
  const ParamIndex ix = layout(f.config);
  const int L = f.seq_len();
  const int d = f.config.model_dim;
  const int heads = f.config.num_heads;
  const int dh = d / heads;
  const Eigen::Index N = static_cast<Eigen::Index>(paths.size());
  std::vector<int> bucket_ids;
  Eigen::MatrixXd x = batch_input(f, paths, buckets, nullptr, &bucket_ids);

  for (const auto& e : ix.enc) {
    Eigen::MatrixXd q = x * f.params[e.wq];
    q.rowwise() += f.params[e.bq].row(0);
    Eigen::MatrixXd k = x * f.params[e.wk];
    k.rowwise() += f.params[e.bk].row(0);
    Eigen::MatrixXd v = x * f.params[e.wv];
    v.rowwise() += f.params[e.bv].row(0);
    Eigen::MatrixXd mixed(N * L, d);
    const double inv = 1.0 / std::sqrt(double(dh));
    for (Eigen::Index n = 0; n < N; ++n) {
      for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd att =
            (q.block(n * L, h * dh, L, dh) * k.block(n * L, h * dh, L, dh).transpose()) *
            inv;
        softmax_rows_inplace(att);
        mixed.block(n * L, h * dh, L, dh).noalias() = att * v.block(n * L, h * dh, L, dh);
      }
    }
    Eigen::MatrixXd o = mixed * f.params[e.wo];
    o.rowwise() += f.params[e.bo].row(0);
    x += o;
    layer_norm_rows_inplace(x);
    Eigen::MatrixXd h1 = (x * f.params[e.w1]);
    h1.rowwise() += f.params[e.b1].row(0);
    h1 = h1.cwiseMax(0.0);
    Eigen::MatrixXd h2 = h1 * f.params[e.w2];
    h2.rowwise() += f.params[e.b2].row(0);
    x += h2;
    layer_norm_rows_inplace(x);
  }

  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(N, 2 * d);
  for (Eigen::Index n = 0; n < N; ++n) {
    z.row(n).head(d) = x.middleRows(n * L, L).colwise().mean();
    if (f.config.use_bucket_embedding)
      z.row(n).tail(d) = f.params[1].row(bucket_ids[static_cast<std::size_t>(n)]);
  }
  Eigen::MatrixXd h1 = z * f.params[ix.head_w1];
  h1.rowwise() += f.params[ix.head_b1].row(0);
  h1 = h1.cwiseMax(0.0);
  Eigen::MatrixXd out = h1 * f.params[ix.head_w2];
  out.rowwise() += f.params[ix.head_b2].row(0);
  return (1.0 / (1.0 + (-out.array()).exp())).matrix();
}

double score(const PathFilter& f, const Path& path, int bucket) {
  return score_batch(f, {path}, {bucket})(0);
}

Eigen::VectorXd score_dataset(const PathFilter& f, const std::vector<ScoredPath>& data) {
  Eigen::VectorXd scores(static_cast<Eigen::Index>(data.size()));
  const std::size_t chunk = 1024;
  for (std::size_t at = 0; at < data.size(); at += chunk) {
    const std::size_t n = std::min(chunk, data.size() - at);
    std::vector<Path> paths;
    std::vector<int> buckets;
    paths.reserve(n);
    buckets.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      paths.push_back(data[at + i].path);
      buckets.push_back(data[at + i].bucket);
    }
    scores.segment(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(n)) =
        score_batch(f, paths, buckets);
  }
  return scores;
}

ad::VarD score_batch_tape(ad::TapeD& tape, const std::vector<ad::VarD>& params,
                          const PathFilter& f, const std::vector<Path>& paths,
                          const std::vector<int>& buckets) {
  using namespace ad;
  const ParamIndex ix = layout(f.config);
  const int L = f.seq_len();
  const int d = f.config.model_dim;
  const int heads = f.config.num_heads;
  const int dh = d / heads;
  const Eigen::Index N = static_cast<Eigen::Index>(paths.size());

  std::vector<int> all_tokens;
  std::vector<int> bucket_ids;
  all_tokens.reserve(static_cast<std::size_t>(N) * L);
  Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(N * L, d);
  for (std::size_t n = 0; n < paths.size(); ++n) {
    const TokenSequence seq = tokenize(f.space, f.vocab, paths[n], buckets[n]);
    for (int l = 0; l < L; ++l) {
      all_tokens.push_back(seq.tokens[l]);
      pos.row(Eigen::Index(n) * L + l) = f.layer_pe.row(l);
      if (f.config.use_block_pe)
        pos.row(Eigen::Index(n) * L + l) += f.block_pe.row(seq.block_index[l]);
    }
    bucket_ids.push_back(buckets[n]);
  }

  VarD x = add(gather_rows(params[0], all_tokens), tape.leaf(pos));
  for (const auto& e : ix.enc) {
    VarD q = add_rowvec(matmul(x, params[e.wq]), params[e.bq]);
    VarD k = add_rowvec(matmul(x, params[e.wk]), params[e.bk]);
    VarD v = add_rowvec(matmul(x, params[e.wv]), params[e.bv]);
    const double inv = 1.0 / std::sqrt(double(dh));
    std::vector<VarD> rows;
    rows.reserve(static_cast<std::size_t>(N));
    for (Eigen::Index n = 0; n < N; ++n) {
      std::vector<VarD> head_outs;
      head_outs.reserve(static_cast<std::size_t>(heads));
      for (int h = 0; h < heads; ++h) {
        VarD qn = slice(q, n * L, L, h * dh, dh);
        VarD kn = slice(k, n * L, L, h * dh, dh);
        VarD vn = slice(v, n * L, L, h * dh, dh);
        VarD att = softmax_rows(scale(matmul(qn, transpose(kn)), inv));
        head_outs.push_back(matmul(att, vn));
      }
      rows.push_back(concat_cols(head_outs));
    }
    VarD mixed = concat_rows(rows);
    VarD o = add_rowvec(matmul(mixed, params[e.wo]), params[e.bo]);
    x = layer_norm_rows(add(x, o));
    VarD h1 = relu(add_rowvec(matmul(x, params[e.w1]), params[e.b1]));
    VarD h2 = add_rowvec(matmul(h1, params[e.w2]), params[e.b2]);
    x = layer_norm_rows(add(x, h2));
  }

  std::vector<VarD> pooled;
  pooled.reserve(static_cast<std::size_t>(N));
  for (Eigen::Index n = 0; n < N; ++n)
    pooled.push_back(mean_over_rows(slice_rows(x, n * L, L)));
  VarD p = concat_rows(pooled);
  VarD b = f.config.use_bucket_embedding
               ? gather_rows(params[1], bucket_ids)
               : tape.leaf(Eigen::MatrixXd::Zero(N, d));
  VarD z = concat_cols(std::vector<VarD>{p, b});
  VarD h1 = relu(add_rowvec(matmul(z, params[ix.head_w1]), params[ix.head_b1]));
  VarD out = add_rowvec(matmul(h1, params[ix.head_w2]), params[ix.head_b2]);
  return sigmoid(out);
}

double pair_loss(double g_a, double g_b, int s) {
  const double m = std::max(0.0, 1.0 - double(s) * (g_a - g_b));
  return m * m;
}

std::vector<RankPair> build_pairs(const std::vector<ScoredPath>& data,
                                  std::size_t max_pairs_per_bucket, std::mt19937_64& rng,
                                  bool bucket_bounded) {
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < data.size(); ++i)
    groups[bucket_bounded ? data[i].bucket : 0].push_back(static_cast<int>(i));

  std::vector<RankPair> out;
  for (auto& [bucket, idx] : groups) {
    std::vector<RankPair> pairs;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const double la = data[static_cast<std::size_t>(idx[a])].target_loss;
        const double lb = data[static_cast<std::size_t>(idx[b])].target_loss;
        if (la == lb) continue;  // no ordering evidence
        pairs.push_back({idx[a], idx[b], la < lb ? +1 : -1});
      }
    }
    if (pairs.size() > max_pairs_per_bucket) {
      std::shuffle(pairs.begin(), pairs.end(), rng);
      pairs.resize(max_pairs_per_bucket);
    }
    out.insert(out.end(), pairs.begin(), pairs.end());
  }
  return out;
}

namespace {

double pair_set_loss(const Eigen::VectorXd& scores, const std::vector<RankPair>& pairs) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : pairs) total += pair_loss(scores(p.first), scores(p.second), p.sign);
  return total / double(pairs.size());
}

double pair_set_accuracy(const Eigen::VectorXd& scores, const std::vector<RankPair>& pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& p : pairs)
    if (double(p.sign) * (scores(p.first) - scores(p.second)) > 0.0) ++correct;
  return double(correct) / double(pairs.size());
}

}  // namespace

TrainResult train_filter(PathFilter& f, const std::vector<ScoredPath>& data,
                         const TrainConfig& cfg) {
  // Bucket-stratified split.
  auto rng_split = make_rng(derive_seed(cfg.seed, "filter.split"));
  std::map<int, std::vector<int>> by_bucket;
  for (std::size_t i = 0; i < data.size(); ++i)
    by_bucket[data[i].bucket].push_back(static_cast<int>(i));
  std::vector<ScoredPath> train_set, val_set;
  for (auto& [bucket, idx] : by_bucket) {
    std::shuffle(idx.begin(), idx.end(), rng_split);
    const std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * double(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& rec = data[static_cast<std::size_t>(idx[i])];
      (i < n_val ? val_set : train_set).push_back(rec);
    }
  }

  auto rng_pairs = make_rng(derive_seed(cfg.seed, "filter.pairs"));
  const auto train_pairs =
      build_pairs(train_set, cfg.max_pairs_per_bucket, rng_pairs, cfg.bucket_bounded_pairs);
  const auto val_pairs =
      build_pairs(val_set, cfg.max_pairs_per_bucket, rng_pairs, cfg.bucket_bounded_pairs);
  if (train_pairs.empty()) throw std::invalid_argument("train_filter: no trainable pairs");

  auto st = ad::make_adam(f.params, ad::AdamConfig<double>{.lr = cfg.lr});
  auto rng_order = make_rng(derive_seed(cfg.seed, "filter.order"));

  TrainResult result;
  result.train_pairs = train_pairs.size();
  result.val_pairs = val_pairs.size();
  std::vector<ad::MatD> best_params = f.params;
  double best_monitor = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<RankPair> order = train_pairs;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_order);
    double epoch_loss = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_pairs)) {
      const std::size_t n = std::min(order.size() - at, static_cast<std::size_t>(cfg.batch_pairs));
      // Unique paths referenced by this batch.
      std::vector<int> uniq;
      for (std::size_t i = 0; i < n; ++i) {
        uniq.push_back(order[at + i].first);
        uniq.push_back(order[at + i].second);
      }
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      std::vector<int> pos_of(train_set.size(), -1);
      std::vector<Path> paths;
      std::vector<int> buckets;
      for (std::size_t i = 0; i < uniq.size(); ++i) {
        pos_of[static_cast<std::size_t>(uniq[i])] = static_cast<int>(i);
        paths.push_back(train_set[static_cast<std::size_t>(uniq[i])].path);
        buckets.push_back(train_set[static_cast<std::size_t>(uniq[i])].bucket);
      }
      std::vector<int> ia, ib;
      Eigen::MatrixXd sgn(static_cast<Eigen::Index>(n), 1);
      for (std::size_t i = 0; i < n; ++i) {
        ia.push_back(pos_of[static_cast<std::size_t>(order[at + i].first)]);
        ib.push_back(pos_of[static_cast<std::size_t>(order[at + i].second)]);
        sgn(static_cast<Eigen::Index>(i), 0) = order[at + i].sign;
      }

      ad::TapeD tape;
      std::vector<ad::VarD> pvars;
      pvars.reserve(f.params.size());
      for (const auto& p : f.params) pvars.push_back(tape.leaf(p));
      ad::VarD scores = score_batch_tape(tape, pvars, f, paths, buckets);
      ad::VarD diff = ad::sub(ad::gather_rows(scores, ia), ad::gather_rows(scores, ib));
      ad::VarD margin = ad::sub(tape.leaf(Eigen::MatrixXd::Ones(sgn.rows(), 1)),
                                ad::mul(tape.leaf(sgn), diff));
      ad::VarD hinge = ad::relu(margin);
      ad::VarD loss = ad::mean_all(ad::mul(hinge, hinge));
      tape.backward(loss);
      std::vector<ad::MatD> grads;
      grads.reserve(pvars.size());
      for (const auto& v : pvars) grads.push_back(tape.grad(v));
      ad::adam_step(f.params, grads, st);
      epoch_loss += loss.value()(0, 0) * double(n);
    }
    epoch_loss /= double(order.size());

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss;
    double monitor = epoch_loss;
    if (!val_pairs.empty()) {
      const Eigen::VectorXd val_scores = score_dataset(f, val_set);
      stats.val_loss = pair_set_loss(val_scores, val_pairs);
      stats.val_pair_accuracy = pair_set_accuracy(val_scores, val_pairs);
      monitor = stats.val_loss;
    }
    result.history.push_back(stats);

    if (monitor < best_monitor - 1e-12) {
      best_monitor = monitor;
      best_params = f.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  f.params = std::move(best_params);
  result.best_val_loss = best_monitor;
  return result;
}

double pair_accuracy(const PathFilter& f, const std::vector<ScoredPath>& data,
                     const std::vector<RankPair>& pairs) {
  return pair_set_accuracy(score_dataset(f, data), pairs);
}

DetectionMetrics weak_detection_from_scores(const std::vector<ScoredPath>& data,
                                            const Eigen::VectorXd& scores, double ratio) {
  std::map<int, std::vector<int>> by_bucket;
  for (std::size_t i = 0; i < data.size(); ++i)
    by_bucket[data[i].bucket].push_back(static_cast<int>(i));

  std::vector<char> truth(data.size(), 0), pred(data.size(), 0);
  for (auto& [bucket, idx] : by_bucket) {
    const auto k = static_cast<std::size_t>(ratio * double(idx.size()) + 1e-9);
    auto worst_by_loss = idx;
    std::stable_sort(worst_by_loss.begin(), worst_by_loss.end(), [&](int a, int b) {
      return data[static_cast<std::size_t>(a)].target_loss >
             data[static_cast<std::size_t>(b)].target_loss;
    });
    auto worst_by_score = idx;
    std::stable_sort(worst_by_score.begin(), worst_by_score.end(),
                     [&](int a, int b) { return scores(a) < scores(b); });
    for (std::size_t i = 0; i < k; ++i) {
      truth[static_cast<std::size_t>(worst_by_loss[i])] = 1;
      pred[static_cast<std::size_t>(worst_by_score[i])] = 1;
    }
  }

  int tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (truth[i] && pred[i]) ++tp;
    if (!truth[i] && pred[i]) ++fp;
    if (truth[i] && !pred[i]) ++fn;
    if (!truth[i] && !pred[i]) ++tn;
  }
  DetectionMetrics m;
  m.true_weak = tp + fn;
  m.predicted_weak = tp + fp;
  m.accuracy = data.empty() ? 0.0 : double(tp + tn) / double(data.size());
  m.precision = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
  m.recall = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
  return m;
}

DetectionMetrics weak_detection_metrics(const PathFilter& f,
                                        const std::vector<ScoredPath>& data, double ratio) {
  return weak_detection_from_scores(data, score_dataset(f, data), ratio);
}

}  // namespace pathrank
