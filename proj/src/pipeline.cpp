#include "pathrank/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

namespace pathrank {

using nlohmann::json;

std::vector<ScoredPath> sample_scored_dataset(const SpaceView& view,
                                              const BucketSpec& buckets, int m_per_bucket,
                                              std::mt19937_64& rng, const PathEval& eval,
                                              std::uint64_t max_draws,
                                              SampleReport* report) {
  const SearchSpace& space = *view.space;
  std::vector<std::vector<ScoredPath>> per_bucket(
      static_cast<std::size_t>(buckets.num_buckets));
  int full = 0;
  std::uint64_t draws = 0;
  while (full < buckets.num_buckets && draws < max_draws) {
    const Path p = sample_uniform(view, rng);
    ++draws;
    const double f = path_flops(space, p);
    if (f < buckets.min_flops || f > buckets.max_flops) continue;  // pruned views only
    const int k = bucket_of(buckets, f);
    auto& bin = per_bucket[static_cast<std::size_t>(k)];
    if (static_cast<int>(bin.size()) >= m_per_bucket) continue;
    bin.push_back(ScoredPath{p, f, k, eval(p)});
    if (static_cast<int>(bin.size()) == m_per_bucket) ++full;
  }

  std::vector<ScoredPath> out;
  if (report) {
    report->draws = draws;
    report->filled.clear();
    report->budget_exhausted = full < buckets.num_buckets;
  }
  for (auto& bin : per_bucket) {
    if (report) report->filled.push_back(static_cast<int>(bin.size()));
    out.insert(out.end(), bin.begin(), bin.end());
  }
  return out;
}

std::vector<std::vector<Path>> sample_bucket_paths(const SpaceView& view,
                                                   const BucketSpec& buckets,
                                                   int per_bucket, std::mt19937_64& rng,
                                                   std::uint64_t max_draws) {
  const SearchSpace& space = *view.space;
  std::vector<std::vector<Path>> bins(static_cast<std::size_t>(buckets.num_buckets));
  int full = 0;
  std::uint64_t draws = 0;
  while (full < buckets.num_buckets && draws < max_draws) {
    const Path p = sample_uniform(view, rng);
    ++draws;
    const double f = path_flops(space, p);
    if (f < buckets.min_flops || f > buckets.max_flops) continue;
    auto& bin = bins[static_cast<std::size_t>(bucket_of(buckets, f))];
    if (static_cast<int>(bin.size()) >= per_bucket) continue;
    bin.push_back(p);
    if (static_cast<int>(bin.size()) == per_bucket) ++full;
  }
  return bins;
}

std::string eval_mode_name(EvalMode m) {
  return m == EvalMode::oracle ? "oracle" : "supernet";
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "oracle") return EvalMode::oracle;
  if (name == "supernet") return EvalMode::supernet;
  throw std::invalid_argument("unknown eval mode: '" + name + "'");
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["space"] = space_to_json(cfg.space);
  j["num_buckets"] = cfg.num_buckets;
  j["mode"] = eval_mode_name(cfg.mode);
  j["oracle"] = {{"noise_std", cfg.oracle.noise_std},
                 {"interaction_scale", cfg.oracle.interaction_scale}};
  j["task"] = {{"input_dim", cfg.task.input_dim},
               {"train_samples", cfg.task.train_samples},
               {"val_samples", cfg.task.val_samples}};
  j["batch_size"] = cfg.batch_size;
  j["supernet_lr"] = cfg.supernet_lr;
  j["filter"] = {{"model_dim", cfg.filter.model_dim},
                 {"num_heads", cfg.filter.num_heads},
                 {"num_encoder_layers", cfg.filter.num_encoder_layers},
                 {"ff_dim", cfg.filter.ff_dim},
                 {"head_hidden", cfg.filter.head_hidden},
                 {"use_bucket_embedding", cfg.filter.use_bucket_embedding},
                 {"use_block_pe", cfg.filter.use_block_pe}};
  j["filter_train"] = {{"lr", cfg.filter_train.lr},
                       {"batch_pairs", cfg.filter_train.batch_pairs},
                       {"max_epochs", cfg.filter_train.max_epochs},
                       {"patience", cfg.filter_train.patience},
                       {"max_pairs_per_bucket", cfg.filter_train.max_pairs_per_bucket},
                       {"bucket_bounded_pairs", cfg.filter_train.bucket_bounded_pairs},
                       {"val_fraction", cfg.filter_train.val_fraction}};
  j["m_per_bucket"] = cfg.m_per_bucket;
  j["pretrain_m_per_bucket"] = cfg.pretrain_m_per_bucket;
  j["strategy"] = cfg.strategy;
  j["ratios"] = {{"r_op", cfg.ratios.r_op},
                 {"r_op1", cfg.ratios.r_op1},
                 {"r_op2", cfg.ratios.r_op2},
                 {"r_path", cfg.ratios.r_path}};
  j["score_samples"] = cfg.score_samples;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["main_epochs"] = cfg.main_epochs;
  j["couple"] = cfg.couple ? couple_rule_to_json(*cfg.couple) : json(nullptr);
  j["seed"] = cfg.seed;
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  cfg.space = space_from_json(j.at("space"));
  cfg.num_buckets = j.at("num_buckets").get<int>();
  cfg.mode = parse_eval_mode(j.at("mode").get<std::string>());
  cfg.oracle.noise_std = j.at("oracle").at("noise_std").get<double>();
  cfg.oracle.interaction_scale = j.at("oracle").at("interaction_scale").get<double>();
  cfg.task.input_dim = j.at("task").at("input_dim").get<int>();
  cfg.task.train_samples = j.at("task").at("train_samples").get<int>();
  cfg.task.val_samples = j.at("task").at("val_samples").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.supernet_lr = j.at("supernet_lr").get<double>();
  const json& f = j.at("filter");
  cfg.filter.model_dim = f.at("model_dim").get<int>();
  cfg.filter.num_heads = f.at("num_heads").get<int>();
  cfg.filter.num_encoder_layers = f.at("num_encoder_layers").get<int>();
  cfg.filter.ff_dim = f.at("ff_dim").get<int>();
  cfg.filter.head_hidden = f.at("head_hidden").get<int>();
  cfg.filter.use_bucket_embedding = f.at("use_bucket_embedding").get<bool>();
  cfg.filter.use_block_pe = f.at("use_block_pe").get<bool>();
  const json& t = j.at("filter_train");
  cfg.filter_train.lr = t.at("lr").get<double>();
  cfg.filter_train.batch_pairs = t.at("batch_pairs").get<int>();
  cfg.filter_train.max_epochs = t.at("max_epochs").get<int>();
  cfg.filter_train.patience = t.at("patience").get<int>();
  cfg.filter_train.max_pairs_per_bucket = t.at("max_pairs_per_bucket").get<std::size_t>();
  cfg.filter_train.bucket_bounded_pairs = t.at("bucket_bounded_pairs").get<bool>();
  cfg.filter_train.val_fraction = t.at("val_fraction").get<double>();
  cfg.m_per_bucket = j.at("m_per_bucket").get<int>();
  cfg.pretrain_m_per_bucket = j.at("pretrain_m_per_bucket").get<int>();
  cfg.strategy = j.at("strategy").get<std::string>();
  parse_strategy(cfg.strategy);  // validate
  const json& r = j.at("ratios");
  cfg.ratios.r_op = r.at("r_op").get<double>();
  cfg.ratios.r_op1 = r.at("r_op1").get<double>();
  cfg.ratios.r_op2 = r.at("r_op2").get<double>();
  cfg.ratios.r_path = r.at("r_path").get<double>();
  cfg.score_samples = j.at("score_samples").get<int>();
  cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
  cfg.main_epochs = j.at("main_epochs").get<int>();
  if (j.contains("couple") && !j.at("couple").is_null()) {
    cfg.couple = couple_rule_from_json(j.at("couple"));
  }
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  return fnv1a64(experiment_config_to_json(cfg).dump());
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.space = default_search_space();
  // Desk budget: the oracle-mode pipeline has to land well under five
  // minutes on one core, and filter fine-tuning dominates. 400 pairs per
  // bucket at 12 epochs keeps it near three.
  cfg.filter_train.max_pairs_per_bucket = 400;
  cfg.filter_train.max_epochs = 12;
  cfg.filter_train.patience = 4;
  return cfg;
}

SyntheticOracle make_run_oracle(const ExperimentConfig& cfg) {
  OracleConfig oc = cfg.oracle;
  oc.seed = derive_seed(cfg.seed, "oracle");
  return SyntheticOracle(cfg.space, oc);
}

SyntheticTask make_run_task(const ExperimentConfig& cfg) {
  TaskConfig tc = cfg.task;
  tc.seed = derive_seed(cfg.seed, "task");
  return make_task(tc);
}

ToySupernet make_run_supernet(const ExperimentConfig& cfg) {
  return make_supernet(cfg.space, cfg.task.input_dim, derive_seed(cfg.seed, "net.init"));
}

json train_run_log_to_json(const TrainRunLog& log) {
  json j;
  j["stages"] = log.stages;
  json eps = json::array();
  for (const auto& e : log.epochs) {
    eps.push_back({{"stage", e.stage},
                   {"epoch", e.epoch},
                   {"mean_loss", e.mean_loss},
                   {"fallbacks", e.fallbacks},
                   {"paths", e.paths}});
  }
  j["epochs"] = std::move(eps);
  return j;
}

TrainRunLog train_run_log_from_json(const json& j) {
  TrainRunLog log;
  log.stages = j.at("stages").get<std::vector<std::string>>();
  for (const json& e : j.at("epochs")) {
    EpochLog ep;
    ep.stage = e.at("stage").get<std::string>();
    ep.epoch = e.at("epoch").get<int>();
    ep.mean_loss = e.at("mean_loss").get<double>();
    ep.fallbacks = e.at("fallbacks").get<int>();
    ep.paths = e.at("paths").get<std::vector<std::string>>();
    log.epochs.push_back(std::move(ep));
  }
  return log;
}

namespace {

// One sampled path per training step plus whether rejection fell back.
using DrawFn = std::function<std::pair<Path, bool>()>;

struct PhaseCtx {
  EvalMode mode = EvalMode::oracle;
  const SyntheticOracle* oracle = nullptr;  // oracle mode
  ToySupernet* net = nullptr;               // supernet mode
  const SyntheticTask* task = nullptr;
  int batch_size = 64;
  double lr = 0.05;
  int steps_per_epoch = 1;
  std::mt19937_64* batch_rng = nullptr;  // supernet minibatch order
};

void run_phase(PhaseCtx& ctx, const std::string& stage, int first_epoch, int num_epochs,
               const DrawFn& draw, TrainRunLog& log) {
  std::vector<int> perm;
  if (ctx.mode == EvalMode::supernet) {
    perm.resize(static_cast<std::size_t>(ctx.task->train_x.rows()));
    std::iota(perm.begin(), perm.end(), 0);
  }
  for (int e = 0; e < num_epochs; ++e) {
    EpochLog ep;
    ep.stage = stage;
    ep.epoch = first_epoch + e;
    double loss_sum = 0.0;
    if (ctx.mode == EvalMode::supernet) {
      std::shuffle(perm.begin(), perm.end(), *ctx.batch_rng);
      const int n = static_cast<int>(perm.size());
      const int d = static_cast<int>(ctx.task->train_x.cols());
      int pos = 0;
      while (pos < n) {
        const int take = std::min(ctx.batch_size, n - pos);
        Eigen::MatrixXd xb(take, d);
        Eigen::VectorXd yb(take);
        for (int i = 0; i < take; ++i) {
          xb.row(i) = ctx.task->train_x.row(perm[static_cast<std::size_t>(pos + i)]);
          yb(i) = ctx.task->train_y(perm[static_cast<std::size_t>(pos + i)]);
        }
        auto [p, fb] = draw();
        loss_sum += supernet_step(*ctx.net, p, xb, yb, ctx.lr);
        ep.fallbacks += fb ? 1 : 0;
        ep.paths.push_back(path_to_string(p));
        pos += take;
      }
    } else {
      for (int s = 0; s < ctx.steps_per_epoch; ++s) {
        auto [p, fb] = draw();
        loss_sum += ctx.oracle->eval(p);
        ep.fallbacks += fb ? 1 : 0;
        ep.paths.push_back(path_to_string(p));
      }
    }
    ep.mean_loss = loss_sum / static_cast<double>(ep.paths.size());
    log.epochs.push_back(std::move(ep));
  }
}

PhaseCtx make_ctx(const ExperimentConfig& cfg, const SyntheticOracle* oracle,
                  ToySupernet* net, const SyntheticTask* task,
                  std::mt19937_64* batch_rng) {
  PhaseCtx ctx;
  ctx.mode = cfg.mode;
  ctx.oracle = oracle;
  ctx.net = net;
  ctx.task = task;
  ctx.batch_size = cfg.batch_size;
  ctx.lr = cfg.supernet_lr;
  ctx.steps_per_epoch =
      std::max(1, (cfg.task.train_samples + cfg.batch_size - 1) / cfg.batch_size);
  ctx.batch_rng = batch_rng;
  return ctx;
}

void validate_config(const ExperimentConfig& cfg) {
  validate_space(cfg.space);
  if (cfg.num_buckets < 1) throw std::invalid_argument("num_buckets must be positive");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (cfg.m_per_bucket < 1) throw std::invalid_argument("m_per_bucket must be positive");
  if (cfg.warmup_epochs < 0 || cfg.main_epochs < 0) {
    throw std::invalid_argument("epoch counts must be non-negative");
  }
  if (cfg.score_samples < 1) throw std::invalid_argument("score_samples must be positive");
  parse_strategy(cfg.strategy);
}

void finish_stage(Algorithm1Result& res, const std::string& stage,
                  const StageHook& hook) {
  res.log.stages.push_back(stage);
  if (hook) hook(stage, res);
}

// Shared setup + warmup for the real pipeline and both baselines. res holds
// no pointers into itself, so moving it out at the end is safe; RunState
// itself stays put for the whole run.
struct RunState {
  Algorithm1Result res;
  std::optional<SyntheticOracle> oracle;
  std::mt19937_64 batch_rng;
};

PhaseCtx ctx_of(RunState& st) {
  return make_ctx(st.res.config, st.oracle ? &*st.oracle : nullptr, &st.res.net,
                  &st.res.task, &st.batch_rng);
}

void start_run(RunState& st, const SpaceView& warmup_view, const StageHook& hook) {
  const ExperimentConfig& cfg = st.res.config;
  validate_config(cfg);
  st.res.buckets = make_buckets(cfg.space, cfg.num_buckets);
  if (cfg.mode == EvalMode::supernet) {
    st.res.task = make_run_task(cfg);
    st.res.net = make_run_supernet(cfg);
  } else {
    st.oracle.emplace(make_run_oracle(cfg));
  }
  st.batch_rng = make_rng(derive_seed(cfg.seed, "batches"));
  finish_stage(st.res, "init", hook);

  PhaseCtx ctx = ctx_of(st);
  auto rng = make_rng(derive_seed(cfg.seed, "warmup"));
  run_phase(ctx, "warmup", 0, cfg.warmup_epochs,
            [&] { return std::pair<Path, bool>{sample_uniform(warmup_view, rng), false}; },
            st.res.log);
  finish_stage(st.res, "warmup", hook);
}

}  // namespace

Algorithm1Result run_algorithm1(const ExperimentConfig& cfg, const StageHook& hook) {
  const auto t0 = std::chrono::steady_clock::now();
  RunState st;
  st.res.config = cfg;
  // Views point at the state's own space copy, which outlives every stage.
  SpaceView full = make_view(st.res.config.space);
  start_run(st, full, hook);
  Algorithm1Result& res = st.res;

  // Sample + validate a per-bucket dataset with the warmed evaluator.
  PathEval eval;
  if (res.config.mode == EvalMode::supernet) {
    eval = [&](const Path& p) {
      return supernet_eval(res.net, p, res.task.val_x, res.task.val_y);
    };
  } else {
    eval = [&](const Path& p) { return st.oracle->eval(p); };
  }
  {
    auto rng = make_rng(derive_seed(res.config.seed, "dataset"));
    res.filter_data = sample_scored_dataset(full, res.buckets, res.config.m_per_bucket,
                                            rng, eval);
  }
  finish_stage(res, "dataset", hook);

  res.filter = make_path_filter(res.config.space, res.buckets, res.config.filter,
                                derive_seed(res.config.seed, "filter.init"));
  if (res.config.pretrain_m_per_bucket > 0) {
    auto rng = make_rng(derive_seed(res.config.seed, "pretrain"));
    const auto pre = sample_scored_dataset(full, res.buckets,
                                           res.config.pretrain_m_per_bucket, rng, eval);
    TrainConfig tc = res.config.filter_train;
    tc.seed = derive_seed(res.config.seed, "filter.pretrain");
    train_filter(res.filter, pre, tc);
  }
  {
    TrainConfig tc = res.config.filter_train;
    tc.seed = derive_seed(res.config.seed, "filter.train");
    train_filter(res.filter, res.filter_data, tc);
  }
  finish_stage(res, "filter", hook);

  {
    auto cands = enumerate_candidates(res.config.space);
    auto score_rng = make_rng(derive_seed(res.config.seed, "opscore"));
    cands = score_candidates(res.filter, full, std::move(cands), res.config.score_samples,
                             score_rng);
    auto prune_rng = make_rng(derive_seed(res.config.seed, "prune"));
    res.prune = prune_operations(res.config.space, cands,
                                 parse_strategy(res.config.strategy), res.config.ratios,
                                 prune_rng);
    res.prune.seed = res.config.seed;
  }
  finish_stage(res, "prune", hook);

  SpaceView pruned = pruned_view(res.config.space, res.prune);
  if (res.config.ratios.r_path == 0.0) {
    // Exactly zero, not the sampled minimum: scores are sigmoids, so every
    // draw clears a zero threshold and the main loop collapses to uniform
    // sampling bit for bit.
    res.prune.thresholds.assign(static_cast<std::size_t>(res.buckets.num_buckets), 0.0);
    res.prune.unreachable_buckets.clear();
  } else {
    auto rng = make_rng(derive_seed(res.config.seed, "delta"));
    res.prune.thresholds =
        path_thresholds(res.filter, pruned, res.config.ratios.r_path,
                        res.config.m_per_bucket, rng, &res.prune.unreachable_buckets);
  }
  finish_stage(res, "delta", hook);

  {
    PhaseCtx ctx = ctx_of(st);
    auto rng = make_rng(derive_seed(res.config.seed, "main"));
    run_phase(ctx, "main", res.config.warmup_epochs, res.config.main_epochs,
              [&] {
                auto r = rejection_sample(pruned, res.filter, res.prune.thresholds, rng);
                return std::pair<Path, bool>{std::move(r.path), r.fallback};
              },
              res.log);
  }
  finish_stage(res, "main", hook);

  res.log.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return std::move(st.res);
}

namespace {

Algorithm1Result run_baseline(const ExperimentConfig& cfg, const CoupleRule* rule,
                              const StageHook& hook) {
  const auto t0 = std::chrono::steady_clock::now();
  RunState st;
  st.res.config = cfg;
  SpaceView view = rule ? apply_couple_rule(st.res.config.space, *rule)
                        : make_view(st.res.config.space);
  start_run(st, view, hook);
  Algorithm1Result& res = st.res;

  PhaseCtx ctx = ctx_of(st);
  auto rng = make_rng(derive_seed(res.config.seed, "main"));
  run_phase(ctx, "main", res.config.warmup_epochs, res.config.main_epochs,
            [&] { return std::pair<Path, bool>{sample_uniform(view, rng), false}; },
            res.log);
  finish_stage(res, "main", hook);

  res.log.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return std::move(st.res);
}

}  // namespace

Algorithm1Result resume_algorithm1(const ExperimentConfig& cfg, PathFilter filter,
                                   PruneState prune, const StageHook& hook) {
  const auto t0 = std::chrono::steady_clock::now();
  if (space_to_json(filter.space).dump() != space_to_json(cfg.space).dump()) {
    throw std::invalid_argument("resume_algorithm1: filter was built for another space");
  }
  if (filter.buckets.num_buckets != cfg.num_buckets ||
      filter.buckets.min_flops != make_buckets(cfg.space, cfg.num_buckets).min_flops) {
    throw std::invalid_argument("resume_algorithm1: filter bucket spec mismatch");
  }
  if (prune.thresholds.size() != std::size_t(cfg.num_buckets)) {
    throw std::invalid_argument("resume_algorithm1: prune state has no thresholds");
  }

  RunState st;
  st.res.config = cfg;
  SpaceView full = make_view(st.res.config.space);
  start_run(st, full, hook);
  Algorithm1Result& res = st.res;
  res.filter = std::move(filter);
  res.prune = std::move(prune);

  SpaceView pruned = pruned_view(res.config.space, res.prune);
  {
    PhaseCtx ctx = ctx_of(st);
    auto rng = make_rng(derive_seed(res.config.seed, "main"));
    run_phase(ctx, "main", res.config.warmup_epochs, res.config.main_epochs,
              [&] {
                auto r = rejection_sample(pruned, res.filter, res.prune.thresholds, rng);
                return std::pair<Path, bool>{std::move(r.path), r.fallback};
              },
              res.log);
  }
  finish_stage(res, "main", hook);

  res.log.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return std::move(st.res);
}

Algorithm1Result baseline_uniform(const ExperimentConfig& cfg, const StageHook& hook) {
  return run_baseline(cfg, nullptr, hook);
}

Algorithm1Result baseline_coupled(const ExperimentConfig& cfg, const StageHook& hook) {
  if (!cfg.couple) {
    throw std::invalid_argument("baseline_coupled: config has no couple rule");
  }
  return run_baseline(cfg, &*cfg.couple, hook);
}

}  // namespace pathrank
