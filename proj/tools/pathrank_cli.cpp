#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pathrank/evo_search.hpp"
#include "pathrank/io.hpp"
#include "pathrank/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pathrank;

namespace {

[[noreturn]] void die(const std::string& command, const std::string& message) {
  std::cerr << json{{"command", command}, {"error", message}}.dump() << '\n';
  std::exit(1);
}

void emit(const json& j) { std::cout << j.dump() << '\n'; }

ExperimentConfig load_config(const std::string& file) {
  try {
    return experiment_config_from_json(json::parse(read_text_file(file)));
  } catch (const json::exception& e) {
    throw std::runtime_error("config '" + file + "': " + e.what());
  }
}

// Standalone artifacts carry a sibling <file>.manifest.json recording the
// producing command, the config hash, and content hashes of the artifact and
// its inputs. Consumers refuse artifacts whose sibling manifest disagrees
// with the current config or whose bytes changed since production.
std::string sibling(const std::string& artifact) { return artifact + ".manifest.json"; }

void write_sibling_manifest(const std::string& artifact, const ExperimentConfig& cfg,
                            const std::string& stage,
                            const std::vector<std::pair<std::string, std::string>>& inputs) {
  RunManifest m;
  m.config_hash = config_hash(cfg);
  m.master_seed = cfg.seed;
  m.stages_done = {stage};
  m.artifacts["self"] = ArtifactRef{fs::path(artifact).filename().string(),
                                    file_hash(artifact)};
  for (const auto& [name, path] : inputs) {
    m.artifacts[name] = ArtifactRef{path, file_hash(path)};
  }
  save_manifest(sibling(artifact), m);
}

void check_input(const std::string& artifact, std::uint64_t cfg_hash) {
  if (!fs::exists(sibling(artifact))) return;  // foreign artifact: nothing to verify
  const RunManifest m = load_manifest(sibling(artifact));
  if (m.config_hash != cfg_hash) {
    throw std::runtime_error("'" + artifact + "' was produced under config hash " +
                             std::to_string(m.config_hash) + ", current config hash is " +
                             std::to_string(cfg_hash));
  }
  const auto it = m.artifacts.find("self");
  if (it != m.artifacts.end() && file_hash(artifact) != it->second.hash) {
    throw std::runtime_error("'" + artifact + "' changed since its manifest was written");
  }
}

struct DirLock {
  std::string path;
  int fd = -1;
  explicit DirLock(const std::string& dir) : path(dir + "/.lock") {
    fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw std::runtime_error("run directory busy: '" + path +
                               "' exists; remove it if no run is active");
    }
  }
  ~DirLock() {
    if (fd >= 0) {
      ::close(fd);
      ::unlink(path.c_str());
    }
  }
};

void bucket_guard(const ExperimentConfig& cfg, const std::vector<ScoredPath>& data) {
  for (const ScoredPath& sp : data) {
    if (sp.bucket < 0 || sp.bucket >= cfg.num_buckets) {
      throw std::runtime_error("dataset record bucket " + std::to_string(sp.bucket) +
                               " outside the config's " +
                               std::to_string(cfg.num_buckets) + " buckets");
    }
  }
}

void require_same_space(const PathFilter& f, const ExperimentConfig& cfg,
                        const std::string& what) {
  if (space_to_json(f.space).dump() != space_to_json(cfg.space).dump()) {
    throw std::runtime_error(what + " was built for a different search space");
  }
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config, source = "oracle", stage = "dataset", supernet, out;
  int m = 0;
};

void cmd_gen_data(const GenDataArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  const int m = a.m > 0 ? a.m : cfg.m_per_bucket;
  const BucketSpec buckets = make_buckets(cfg.space, cfg.num_buckets);
  const SpaceView view = make_view(cfg.space);

  std::optional<SyntheticOracle> oracle;
  ToySupernet net;
  SyntheticTask task;
  PathEval eval;
  std::vector<std::pair<std::string, std::string>> inputs{{"config", a.config}};
  if (a.source == "oracle") {
    oracle.emplace(make_run_oracle(cfg));
    eval = [&](const Path& p) { return oracle->eval(p); };
  } else if (a.source == "supernet") {
    if (a.supernet.empty()) {
      throw std::runtime_error("--source supernet requires --supernet CKPT");
    }
    check_input(a.supernet, config_hash(cfg));
    net = load_supernet(a.supernet);
    task = make_run_task(cfg);
    eval = [&](const Path& p) { return supernet_eval(net, p, task.val_x, task.val_y); };
    inputs.emplace_back("supernet", a.supernet);
  } else {
    throw std::runtime_error("--source must be oracle or supernet");
  }
  if (a.stage != "dataset" && a.stage != "pretrain") {
    throw std::runtime_error("--stage must be dataset or pretrain");
  }

  auto rng = make_rng(derive_seed(cfg.seed, a.stage));
  SampleReport report;
  const auto data = sample_scored_dataset(view, buckets, m, rng, eval, 4000000, &report);
  save_dataset(a.out, data);
  write_sibling_manifest(a.out, cfg, "gen-data", inputs);
  emit({{"out", a.out},
        {"records", data.size()},
        {"draws", report.draws},
        {"filled", report.filled},
        {"budget_exhausted", report.budget_exhausted}});
}

// ------------------------------------------------------------ train-filter

struct TrainFilterArgs {
  std::string config, data, pretrained, out;
};

void cmd_train_filter(const TrainFilterArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  const std::uint64_t chash = config_hash(cfg);
  check_input(a.data, chash);
  const auto data = load_dataset(a.data);
  if (data.empty()) throw std::runtime_error("dataset '" + a.data + "' is empty");
  bucket_guard(cfg, data);

  PathFilter filter;
  std::vector<std::pair<std::string, std::string>> inputs{{"config", a.config},
                                                          {"data", a.data}};
  if (!a.pretrained.empty()) {
    check_input(a.pretrained, chash);
    filter = load_filter(a.pretrained);
    require_same_space(filter, cfg, "pretrained filter");
    inputs.emplace_back("pretrained", a.pretrained);
  } else {
    filter = make_path_filter(cfg.space, make_buckets(cfg.space, cfg.num_buckets),
                              cfg.filter, derive_seed(cfg.seed, "filter.init"));
  }

  TrainConfig tc = cfg.filter_train;
  tc.seed = derive_seed(cfg.seed, "filter.train");
  const TrainResult result = train_filter(filter, data, tc);

  save_filter(a.out, filter, cfg.seed);
  write_sibling_manifest(a.out, cfg, "train-filter", inputs);
  emit({{"out", a.out},
        {"epochs_run", result.history.size()},
        {"best_epoch", result.best_epoch},
        {"best_val_loss", result.best_val_loss},
        {"train_pairs", result.train_pairs},
        {"val_pairs", result.val_pairs}});
}

// ------------------------------------------------------------- eval-filter

struct EvalFilterArgs {
  std::string config, filter, data, out;
  double ratio = 0.25;
};

void cmd_eval_filter(const EvalFilterArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  const std::uint64_t chash = config_hash(cfg);
  check_input(a.filter, chash);
  check_input(a.data, chash);
  const PathFilter filter = load_filter(a.filter);
  require_same_space(filter, cfg, "filter");
  const auto data = load_dataset(a.data);
  bucket_guard(cfg, data);

  const DetectionMetrics m = weak_detection_metrics(filter, data, a.ratio);
  auto rng = make_rng(derive_seed(cfg.seed, "eval"));
  const auto pairs = build_pairs(data, cfg.filter_train.max_pairs_per_bucket, rng,
                                 cfg.filter_train.bucket_bounded_pairs);
  const json out{{"ratio", a.ratio},
                 {"accuracy", m.accuracy},
                 {"precision", m.precision},
                 {"recall", m.recall},
                 {"true_weak", m.true_weak},
                 {"predicted_weak", m.predicted_weak},
                 {"pair_accuracy", pair_accuracy(filter, data, pairs)},
                 {"pairs", pairs.size()},
                 {"records", data.size()}};
  if (!a.out.empty()) {
    write_text_file(a.out, out.dump(2) + "\n");
    write_sibling_manifest(a.out, cfg, "eval-filter",
                           {{"config", a.config}, {"filter", a.filter}, {"data", a.data}});
  }
  emit(out);
}

// ------------------------------------------------------------------- prune

struct PruneArgs {
  std::string config, filter, strategy, out;
  double r_op = -1.0, r_op1 = -1.0, r_op2 = -1.0, r_path = -1.0;
  int score_samples = 0;
};

void cmd_prune(const PruneArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  // Inputs are checked against the config file as written; the ratio and
  // strategy flags only change what this command computes, and the output
  // manifest records the effective config.
  check_input(a.filter, config_hash(cfg));
  if (!a.strategy.empty()) cfg.strategy = a.strategy;
  if (a.r_op >= 0.0) cfg.ratios.r_op = a.r_op;
  if (a.r_op1 >= 0.0) cfg.ratios.r_op1 = a.r_op1;
  if (a.r_op2 >= 0.0) cfg.ratios.r_op2 = a.r_op2;
  if (a.r_path >= 0.0) cfg.ratios.r_path = a.r_path;
  if (a.score_samples > 0) cfg.score_samples = a.score_samples;

  const PathFilter filter = load_filter(a.filter);
  require_same_space(filter, cfg, "filter");

  const SpaceView full = make_view(cfg.space);
  auto cands = enumerate_candidates(cfg.space);
  auto score_rng = make_rng(derive_seed(cfg.seed, "opscore"));
  cands = score_candidates(filter, full, std::move(cands), cfg.score_samples, score_rng);
  auto prune_rng = make_rng(derive_seed(cfg.seed, "prune"));
  PruneState st = prune_operations(cfg.space, cands, parse_strategy(cfg.strategy),
                                   cfg.ratios, prune_rng);
  st.seed = cfg.seed;

  const SpaceView pruned = pruned_view(cfg.space, st);
  if (cfg.ratios.r_path == 0.0) {
    st.thresholds.assign(std::size_t(cfg.num_buckets), 0.0);
  } else {
    auto rng = make_rng(derive_seed(cfg.seed, "delta"));
    st.thresholds = path_thresholds(filter, pruned, cfg.ratios.r_path, cfg.m_per_bucket,
                                    rng, &st.unreachable_buckets);
  }

  write_text_file(a.out, prune_state_to_json(st).dump(2) + "\n");
  write_sibling_manifest(a.out, cfg, "prune",
                         {{"config", a.config}, {"filter", a.filter}});
  emit({{"out", a.out},
        {"strategy", st.strategy},
        {"removed", st.removed.size()},
        {"candidates", cands.size()},
        {"thresholds", st.thresholds},
        {"unreachable_buckets", st.unreachable_buckets},
        {"paths_before", count_paths(full).str()},
        {"paths_after", count_paths(pruned).str()}});
}

// ---------------------------------------------------------- train-supernet

struct TrainSupernetArgs {
  std::string config, out, method = "alg1", prune, filter;
  int epochs = 0;
};

void cmd_train_supernet(const TrainSupernetArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.epochs > 0) cfg.main_epochs = a.epochs;
  if (a.method != "alg1" && a.method != "uniform" && a.method != "coupled") {
    throw std::runtime_error("--method must be alg1, uniform, or coupled");
  }
  const std::uint64_t chash = config_hash(cfg);

  fs::create_directories(a.out);
  DirLock lock(a.out);

  // One config per run directory, shared by every method inside it.
  const std::string cfg_file = a.out + "/config.json";
  const std::string cfg_text = experiment_config_to_json(cfg).dump(2) + "\n";
  if (fs::exists(cfg_file)) {
    if (config_hash(load_config(cfg_file)) != chash) {
      throw std::runtime_error("run directory was created with a different config");
    }
  } else {
    write_text_file(cfg_file, cfg_text);
  }

  const std::string mf_file = a.out + "/manifest.json";
  RunManifest manifest;
  if (fs::exists(mf_file)) {
    manifest = load_manifest(mf_file);
    if (manifest.config_hash != chash) {
      throw std::runtime_error("run manifest carries a different config hash");
    }
  } else {
    manifest.config_hash = chash;
    manifest.master_seed = cfg.seed;
    record_artifact(manifest, a.out, "config", "config.json");
  }

  auto mark = [&](const std::string& stage) {
    const std::string key = a.method + ":" + stage;
    if (std::find(manifest.stages_done.begin(), manifest.stages_done.end(), key) ==
        manifest.stages_done.end()) {
      manifest.stages_done.push_back(key);
    }
    save_manifest(mf_file, manifest);
  };

  const StageHook hook = [&](const std::string& stage, const Algorithm1Result& partial) {
    if (stage == "dataset") {
      const std::string f = a.method + ".dataset.jsonl";
      save_dataset(a.out + "/" + f, partial.filter_data);
      record_artifact(manifest, a.out, a.method + ".dataset", f);
    }
    if (stage == "filter") {
      const std::string f = a.method + ".filter.ckpt";
      save_filter(a.out + "/" + f, partial.filter, cfg.seed);
      record_artifact(manifest, a.out, a.method + ".filter", f);
    }
    if (stage == "delta") {
      const std::string f = a.method + ".prune.json";
      write_text_file(a.out + "/" + f, prune_state_to_json(partial.prune).dump(2) + "\n");
      record_artifact(manifest, a.out, a.method + ".prune", f);
    }
    mark(stage);
  };

  Algorithm1Result res;
  if (a.method == "alg1" && !a.prune.empty()) {
    if (a.filter.empty()) throw std::runtime_error("--prune requires --filter");
    check_input(a.prune, chash);
    check_input(a.filter, chash);
    PathFilter filter = load_filter(a.filter);
    PruneState st = prune_state_from_json(json::parse(read_text_file(a.prune)));
    res = resume_algorithm1(cfg, std::move(filter), std::move(st), hook);
  } else if (a.method == "alg1") {
    res = run_algorithm1(cfg, hook);
  } else if (a.method == "uniform") {
    res = baseline_uniform(cfg, hook);
  } else {
    res = baseline_coupled(cfg, hook);
  }

  const std::string log_file = a.method + ".log.json";
  write_text_file(a.out + "/" + log_file, train_run_log_to_json(res.log).dump(2) + "\n");
  record_artifact(manifest, a.out, a.method + ".log", log_file);
  // Wall time is a sidecar: real but not part of the reproducible surface.
  write_text_file(a.out + "/" + a.method + ".time.json",
                  json{{"wall_time_sec", res.log.wall_time_sec}}.dump() + "\n");
  if (cfg.mode == EvalMode::supernet) {
    const std::string net_file = a.method + ".supernet.ckpt";
    save_supernet(a.out + "/" + net_file, res.net, cfg.seed);
    record_artifact(manifest, a.out, a.method + ".supernet", net_file);
  }
  if (a.method == "alg1" && !a.prune.empty()) {
    const std::string f = a.method + ".prune.json";
    write_text_file(a.out + "/" + f, prune_state_to_json(res.prune).dump(2) + "\n");
    record_artifact(manifest, a.out, a.method + ".prune", f);
  }
  mark("done");

  int fallbacks = 0;
  for (const auto& ep : res.log.epochs) fallbacks += ep.fallbacks;
  emit({{"out", a.out},
        {"method", a.method},
        {"stages", res.log.stages},
        {"epochs", res.log.epochs.size()},
        {"final_mean_loss", res.log.epochs.empty() ? 0.0 : res.log.epochs.back().mean_loss},
        {"fallbacks", fallbacks},
        {"wall_time_sec", res.log.wall_time_sec}});
}

// ------------------------------------------------------------------ search

struct SearchArgs {
  std::string config, filter, prune, out;
  double budget = 0.0;
  std::vector<double> sweep;
  int generations = 500, population = 64, tournament = 16;
  double mutation = 0.1;
};

void cmd_search(const SearchArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  const std::uint64_t chash = config_hash(cfg);
  check_input(a.filter, chash);
  const PathFilter filter = load_filter(a.filter);
  require_same_space(filter, cfg, "filter");

  PruneState st;
  if (!a.prune.empty()) {
    check_input(a.prune, chash);
    st = prune_state_from_json(json::parse(read_text_file(a.prune)));
  }
  const SpaceView view = pruned_view(cfg.space, st);

  std::vector<double> budgets = a.sweep;
  if (budgets.empty()) {
    if (a.budget <= 0.0) throw std::runtime_error("need --budget or --sweep");
    budgets.push_back(a.budget);
  }

  EvoConfig evo;
  evo.population_size = a.population;
  evo.sample_size = a.tournament;
  evo.generations = a.generations;
  evo.mutation_prob = a.mutation;
  evo.seed = derive_seed(cfg.seed, "search");

  const auto results = pareto_sweep(filter, view, budgets, evo);

  PathScorer oracle_loss;
  std::optional<SyntheticOracle> oracle;
  if (cfg.mode == EvalMode::oracle) {
    oracle.emplace(make_run_oracle(cfg));
    oracle_loss = [&](const Path& p) { return oracle->eval(p); };
  }
  const std::string csv = pareto_csv(budgets, results, oracle_loss);
  write_text_file(a.out, csv);
  std::vector<std::pair<std::string, std::string>> inputs{{"config", a.config},
                                                          {"filter", a.filter}};
  if (!a.prune.empty()) inputs.emplace_back("prune", a.prune);
  write_sibling_manifest(a.out, cfg, "search", inputs);

  json rows = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    rows.push_back({{"budget", budgets[i]},
                    {"flops", results[i].flops},
                    {"proxy_score", results[i].score},
                    {"generation_found", results[i].generation_found},
                    {"best", path_to_json(results[i].best)}});
  }
  emit({{"out", a.out}, {"results", rows}});
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::string run, out;
  int test_paths = 32;
};

void cmd_report(const ReportArgs& a) {
  const std::string mf_file = a.run + "/manifest.json";
  if (!fs::exists(mf_file)) {
    throw std::runtime_error("'" + a.run + "' has no manifest.json");
  }
  RunManifest manifest = load_manifest(mf_file);
  check_artifacts(manifest, a.run);
  const ExperimentConfig cfg = load_config(a.run + "/config.json");
  if (config_hash(cfg) != manifest.config_hash) {
    throw std::runtime_error("config.json does not match the manifest's config hash");
  }

  const BucketSpec buckets = make_buckets(cfg.space, cfg.num_buckets);
  const SpaceView full = make_view(cfg.space);
  auto rng = make_rng(derive_seed(cfg.seed, "report"));
  const auto test_bins = sample_bucket_paths(full, buckets, a.test_paths, rng);

  std::optional<SyntheticOracle> oracle;
  SyntheticTask task;
  if (cfg.mode == EvalMode::oracle) {
    oracle.emplace(make_run_oracle(cfg));
  } else {
    task = make_run_task(cfg);
  }

  std::ostringstream csv;
  csv << "method,bucket,test_paths,mean_test_loss,delta,main_samples,fallbacks\n";
  bool any = false;
  for (const std::string method : {"alg1", "coupled", "uniform"}) {
    if (!manifest.artifacts.count(method + ".log")) continue;
    any = true;
    const TrainRunLog log = train_run_log_from_json(
        json::parse(read_text_file(a.run + "/" + method + ".log.json")));

    PathEval eval;
    ToySupernet net;
    if (cfg.mode == EvalMode::oracle) {
      eval = [&](const Path& p) { return oracle->eval(p); };
    } else {
      net = load_supernet(a.run + "/" + method + ".supernet.ckpt");
      eval = [&](const Path& p) { return supernet_eval(net, p, task.val_x, task.val_y); };
    }

    std::vector<double> delta(std::size_t(cfg.num_buckets), 0.0);
    if (manifest.artifacts.count(method + ".prune")) {
      const PruneState st = prune_state_from_json(
          json::parse(read_text_file(a.run + "/" + method + ".prune.json")));
      if (st.thresholds.size() == delta.size()) delta = st.thresholds;
    }

    std::vector<int> main_samples(std::size_t(cfg.num_buckets), 0);
    int fallbacks = 0;
    for (const auto& ep : log.epochs) {
      if (ep.stage != "main") continue;
      fallbacks += ep.fallbacks;
      for (const auto& s : ep.paths) {
        const Path p = path_from_string(s);
        ++main_samples[std::size_t(bucket_of(buckets, path_flops(cfg.space, p)))];
      }
    }

    for (int k = 0; k < cfg.num_buckets; ++k) {
      const auto& bin = test_bins[std::size_t(k)];
      csv << method << ',' << k << ',' << bin.size() << ',';
      if (!bin.empty()) {
        double sum = 0.0;
        for (const Path& p : bin) sum += eval(p);
        csv << format_double(sum / double(bin.size()));
      }
      csv << ',' << format_double(delta[std::size_t(k)]) << ','
          << main_samples[std::size_t(k)] << ',' << fallbacks << '\n';
    }
  }
  if (!any) throw std::runtime_error("no completed method logs in '" + a.run + "'");

  write_text_file(a.out, csv.str());
  {
    DirLock lock(a.run);
    const fs::path out_path = fs::absolute(a.out);
    const fs::path run_path = fs::absolute(a.run);
    if (out_path.parent_path() == run_path) {
      record_artifact(manifest, a.run, "report", out_path.filename().string());
    }
    if (std::find(manifest.stages_done.begin(), manifest.stages_done.end(), "report") ==
        manifest.stages_done.end()) {
      manifest.stages_done.push_back("report");
    }
    save_manifest(mf_file, manifest);
  }
  emit({{"out", a.out}, {"methods", any}, {"test_paths_per_bucket", a.test_paths}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FLOPs-bucketed path ranking, pruning, and search pipeline"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Sample a per-bucket scored-path dataset");
  gen->add_option("--config", gd.config, "experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--source", gd.source, "oracle|supernet (default oracle)");
  gen->add_option("--m", gd.m, "records per bucket (default: config m_per_bucket)");
  gen->add_option("--stage", gd.stage, "seed stage: dataset|pretrain (default dataset)");
  gen->add_option("--supernet", gd.supernet, "supernet checkpoint for --source supernet");
  gen->add_option("--out", gd.out, "output JSONL")->required();

  TrainFilterArgs tf;
  auto* trf = app.add_subcommand("train-filter", "Train or fine-tune the ranking filter");
  trf->add_option("--config", tf.config)->required()->check(CLI::ExistingFile);
  trf->add_option("--data", tf.data, "scored-path JSONL")->required()
      ->check(CLI::ExistingFile);
  trf->add_option("--pretrained", tf.pretrained, "checkpoint to fine-tune from")
      ->check(CLI::ExistingFile);
  trf->add_option("--out", tf.out, "output checkpoint")->required();

  EvalFilterArgs ef;
  auto* evf = app.add_subcommand("eval-filter", "Weak-path detection metrics");
  evf->add_option("--config", ef.config)->required()->check(CLI::ExistingFile);
  evf->add_option("--filter", ef.filter)->required()->check(CLI::ExistingFile);
  evf->add_option("--data", ef.data)->required()->check(CLI::ExistingFile);
  evf->add_option("--ratio", ef.ratio, "weak fraction per bucket (default 0.25)");
  evf->add_option("--out", ef.out, "also write metrics JSON here");

  PruneArgs pr;
  auto* prn = app.add_subcommand("prune", "Score and prune operations, compute deltas");
  prn->add_option("--config", pr.config)->required()->check(CLI::ExistingFile);
  prn->add_option("--filter", pr.filter)->required()->check(CLI::ExistingFile);
  prn->add_option("--strategy", pr.strategy,
                  "flops_uniform|flops_score_per_bucket|flops_score_all");
  prn->add_option("--r-op", pr.r_op, "per-bucket removal ratio (single-stage strategies)");
  prn->add_option("--r-op1", pr.r_op1, "global removal ratio (flops_score_all)");
  prn->add_option("--r-op2", pr.r_op2, "per-bucket removal ratio (flops_score_all)");
  prn->add_option("--r-path", pr.r_path, "path threshold quantile");
  prn->add_option("--score-samples", pr.score_samples, "forced-insertion samples per op");
  prn->add_option("--out", pr.out, "output prune-state JSON")->required();

  TrainSupernetArgs ts;
  auto* tsn = app.add_subcommand("train-supernet", "Run the training pipeline");
  tsn->add_option("--config", ts.config)->required()->check(CLI::ExistingFile);
  tsn->add_option("--out", ts.out, "run directory")->required();
  tsn->add_option("--method", ts.method, "alg1|uniform|coupled (default alg1)");
  tsn->add_option("--epochs", ts.epochs, "override main epochs");
  tsn->add_option("--prune", ts.prune, "precomputed prune-state JSON (alg1 only)")
      ->check(CLI::ExistingFile);
  tsn->add_option("--filter", ts.filter, "trained filter checkpoint (with --prune)")
      ->check(CLI::ExistingFile);

  SearchArgs se;
  auto* sch = app.add_subcommand("search", "Budget-constrained evolutionary search");
  sch->add_option("--config", se.config)->required()->check(CLI::ExistingFile);
  sch->add_option("--filter", se.filter)->required()->check(CLI::ExistingFile);
  sch->add_option("--prune", se.prune, "prune-state JSON restricting the space")
      ->check(CLI::ExistingFile);
  sch->add_option("--budget", se.budget, "FLOPs budget (MFLOPs)");
  sch->add_option("--sweep", se.sweep, "comma-separated budget list")->delimiter(',');
  sch->add_option("--generations", se.generations, "default 500");
  sch->add_option("--population", se.population, "default 64");
  sch->add_option("--tournament", se.tournament, "default 16");
  sch->add_option("--mutation", se.mutation, "per-decision probability, default 0.1");
  sch->add_option("--out", se.out, "output CSV")->required();

  ReportArgs rp;
  auto* rep = app.add_subcommand("report", "Per-bucket method comparison CSV");
  rep->add_option("--run", rp.run, "run directory")->required()
      ->check(CLI::ExistingDirectory);
  rep->add_option("--out", rp.out, "output CSV")->required();
  rep->add_option("--test-paths", rp.test_paths, "test paths per bucket (default 32)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << json{{"command", "parse"}, {"error", e.what()}}.dump() << '\n';
    return 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (gen->parsed()) cmd_gen_data(gd);
    if (trf->parsed()) cmd_train_filter(tf);
    if (evf->parsed()) cmd_eval_filter(ef);
    if (prn->parsed()) cmd_prune(pr);
    if (tsn->parsed()) cmd_train_supernet(ts);
    if (sch->parsed()) cmd_search(se);
    if (rep->parsed()) cmd_report(rp);
  } catch (const std::exception& e) {
    die(name, e.what());
  }
  return 0;
}
