#include "pathrank/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pathrank/tokenizer.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; add byte swaps for this target");

namespace pathrank {

using nlohmann::json;

namespace {

constexpr const char* kFilterFormat = "pathrank-filter";
constexpr const char* kSupernetFormat = "pathrank-supernet";
constexpr int kCheckpointVersion = 1;

std::ofstream open_out(const std::string& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + file + "'");
  return out;
}

std::ifstream open_in(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + file + "'");
  return in;
}

json shapes_of(const std::vector<std::string>& names,
               const std::vector<Eigen::MatrixXd>& params) {
  json shapes = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    shapes.push_back({{"name", names[i]},
                      {"rows", params[i].rows()},
                      {"cols", params[i].cols()}});
  }
  return shapes;
}

void write_payload(std::ofstream& out, const std::vector<Eigen::MatrixXd>& params) {
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.data()),
              static_cast<std::streamsize>(sizeof(double) * std::size_t(p.size())));
  }
}

// Reads the manifest line, checks format/version, then fills each parameter
// from the payload against the manifest's shapes.
json read_checkpoint(std::ifstream& in, const std::string& file,
                     const std::string& want_format,
                     std::vector<std::string>* names_out,
                     std::vector<Eigen::MatrixXd>* params_out) {
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("'" + file + "': missing manifest line");
  }
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error("'" + file + "': bad manifest: " + e.what());
  }
  if (manifest.value("format", "") != want_format) {
    throw std::runtime_error("'" + file + "': not a " + want_format + " checkpoint");
  }
  if (manifest.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("'" + file + "': unsupported checkpoint version");
  }
  names_out->clear();
  params_out->clear();
  for (const json& s : manifest.at("params")) {
    const auto rows = s.at("rows").get<Eigen::Index>();
    const auto cols = s.at("cols").get<Eigen::Index>();
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * std::size_t(m.size())));
    if (!in) {
      throw std::runtime_error("'" + file + "': payload shorter than manifest shapes");
    }
    names_out->push_back(s.at("name").get<std::string>());
    params_out->push_back(std::move(m));
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw std::runtime_error("'" + file + "': trailing bytes after payload");
  }
  return manifest;
}

}  // namespace

void save_dataset(const std::string& file, const std::vector<ScoredPath>& data) {
  std::ofstream out = open_out(file);
  for (const ScoredPath& sp : data) {
    json j;
    j["path"] = path_to_json(sp.path);
    j["flops"] = sp.flops;
    j["bucket"] = sp.bucket;
    j["target_loss"] = sp.target_loss;
    out << j.dump() << '\n';
  }
}

std::vector<ScoredPath> load_dataset(const std::string& file) {
  std::ifstream in = open_in(file);
  std::vector<ScoredPath> data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("'" + file + "' line " + std::to_string(lineno) + ": " +
                               e.what());
    }
    ScoredPath sp;
    sp.path = path_from_json(j.at("path"));
    sp.flops = j.at("flops").get<double>();
    sp.bucket = j.at("bucket").get<int>();
    sp.target_loss = j.at("target_loss").get<double>();
    data.push_back(std::move(sp));
  }
  return data;
}

void save_filter(const std::string& file, const PathFilter& f, std::uint64_t seed) {
  json manifest;
  manifest["format"] = kFilterFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["seed"] = seed;
  manifest["config"] = {{"model_dim", f.config.model_dim},
                        {"num_heads", f.config.num_heads},
                        {"num_encoder_layers", f.config.num_encoder_layers},
                        {"ff_dim", f.config.ff_dim},
                        {"head_hidden", f.config.head_hidden},
                        {"use_bucket_embedding", f.config.use_bucket_embedding},
                        {"use_block_pe", f.config.use_block_pe}};
  manifest["space"] = space_to_json(f.space);
  manifest["buckets"] = bucket_spec_to_json(f.buckets);
  manifest["vocab"] = vocabulary_to_json(f.vocab);
  manifest["params"] = shapes_of(f.param_names, f.params);

  std::ofstream out = open_out(file);
  out << manifest.dump() << '\n';
  write_payload(out, f.params);
}

PathFilter load_filter(const std::string& file, std::uint64_t* seed) {
  std::ifstream in = open_in(file);
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> params;
  const json manifest = read_checkpoint(in, file, kFilterFormat, &names, &params);

  FilterConfig cfg;
  const json& c = manifest.at("config");
  cfg.model_dim = c.at("model_dim").get<int>();
  cfg.num_heads = c.at("num_heads").get<int>();
  cfg.num_encoder_layers = c.at("num_encoder_layers").get<int>();
  cfg.ff_dim = c.at("ff_dim").get<int>();
  cfg.head_hidden = c.at("head_hidden").get<int>();
  cfg.use_bucket_embedding = c.at("use_bucket_embedding").get<bool>();
  cfg.use_block_pe = c.at("use_block_pe").get<bool>();

  const SearchSpace space = space_from_json(manifest.at("space"));
  const BucketSpec buckets = bucket_spec_from_json(manifest.at("buckets"));
  PathFilter f = make_path_filter(space, buckets, cfg, 0);

  const Vocabulary stored = vocabulary_from_json(manifest.at("vocab"));
  if (stored.id_to_token != f.vocab.id_to_token) {
    throw std::runtime_error("'" + file +
                             "': vocabulary does not match the checkpoint's space");
  }
  if (names != f.param_names) {
    throw std::runtime_error("'" + file + "': parameter layout mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != f.params[i].rows() || params[i].cols() != f.params[i].cols()) {
      throw std::runtime_error("'" + file + "': shape mismatch for " + names[i]);
    }
    f.params[i] = params[i];
  }
  if (seed) *seed = manifest.at("seed").get<std::uint64_t>();
  return f;
}

void save_supernet(const std::string& file, const ToySupernet& net, std::uint64_t seed) {
  json manifest;
  manifest["format"] = kSupernetFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["seed"] = seed;
  manifest["input_dim"] = net.input_dim;
  manifest["space"] = space_to_json(net.space);
  manifest["params"] = shapes_of(net.param_names, net.params);

  std::ofstream out = open_out(file);
  out << manifest.dump() << '\n';
  write_payload(out, net.params);
}

ToySupernet load_supernet(const std::string& file, std::uint64_t* seed) {
  std::ifstream in = open_in(file);
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> params;
  const json manifest = read_checkpoint(in, file, kSupernetFormat, &names, &params);

  const SearchSpace space = space_from_json(manifest.at("space"));
  ToySupernet net = make_supernet(space, manifest.at("input_dim").get<int>(), 0);
  if (names != net.param_names) {
    throw std::runtime_error("'" + file + "': parameter layout mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != net.params[i].rows() ||
        params[i].cols() != net.params[i].cols()) {
      throw std::runtime_error("'" + file + "': shape mismatch for " + names[i]);
    }
    net.params[i] = params[i];
  }
  if (seed) *seed = manifest.at("seed").get<std::uint64_t>();
  return net;
}

json run_manifest_to_json(const RunManifest& m) {
  json j;
  j["config_hash"] = m.config_hash;
  j["tool_version"] = m.tool_version;
  j["master_seed"] = m.master_seed;
  j["stages_done"] = m.stages_done;
  json arts = json::object();
  for (const auto& [name, ref] : m.artifacts) {
    arts[name] = {{"path", ref.path}, {"hash", ref.hash}};
  }
  j["artifacts"] = std::move(arts);
  return j;
}

RunManifest run_manifest_from_json(const json& j) {
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  m.stages_done = j.at("stages_done").get<std::vector<std::string>>();
  for (const auto& [name, ref] : j.at("artifacts").items()) {
    m.artifacts[name] = ArtifactRef{ref.at("path").get<std::string>(),
                                    ref.at("hash").get<std::uint64_t>()};
  }
  return m;
}

void save_manifest(const std::string& file, const RunManifest& m) {
  write_text_file(file, run_manifest_to_json(m).dump(2) + "\n");
}

RunManifest load_manifest(const std::string& file) {
  try {
    return run_manifest_from_json(json::parse(read_text_file(file)));
  } catch (const json::exception& e) {
    throw std::runtime_error("'" + file + "': bad manifest: " + e.what());
  }
}

std::uint64_t file_hash(const std::string& file) {
  return fnv1a64(read_text_file(file));
}

void record_artifact(RunManifest& m, const std::string& dir, const std::string& name,
                     const std::string& rel_path) {
  m.artifacts[name] = ArtifactRef{rel_path, file_hash(dir + "/" + rel_path)};
}

void check_artifacts(const RunManifest& m, const std::string& dir) {
  for (const auto& [name, ref] : m.artifacts) {
    const std::string full = dir + "/" + ref.path;
    std::ifstream probe(full, std::ios::binary);
    if (!probe) {
      throw std::runtime_error("artifact '" + name + "' missing: " + full);
    }
    probe.close();
    if (file_hash(full) != ref.hash) {
      throw std::runtime_error("artifact '" + name + "' modified since recorded: " + full);
    }
  }
}

std::string read_text_file(const std::string& file) {
  std::ifstream in = open_in(file);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& file, const std::string& content) {
  std::ofstream out = open_out(file);
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + file + "'");
}

}  // namespace pathrank
