#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pathrank/path_filter.hpp"
#include "pathrank/supernet.hpp"

namespace pathrank {

inline constexpr const char* kToolVersion = "0.1.0";

// JSON-lines dataset: one ScoredPath per line, keys sorted, canonical path
// JSON. save -> load -> save reproduces the file byte for byte.
void save_dataset(const std::string& file, const std::vector<ScoredPath>& data);
std::vector<ScoredPath> load_dataset(const std::string& file);

// Checkpoints are one file: a single-line JSON manifest (format, version,
// seed, hyperparameters, space, bucket edges, vocabulary, parameter shapes)
// followed by each parameter's raw little-endian float64 payload,
// column-major, in manifest order. Loaders rebuild the model from the
// manifest and refuse wrong formats, mismatched vocabularies, or short
// payloads.
void save_filter(const std::string& file, const PathFilter& f, std::uint64_t seed);
PathFilter load_filter(const std::string& file, std::uint64_t* seed = nullptr);

void save_supernet(const std::string& file, const ToySupernet& net, std::uint64_t seed);
ToySupernet load_supernet(const std::string& file, std::uint64_t* seed = nullptr);

struct ArtifactRef {
  std::string path;        // relative to the manifest's directory
  std::uint64_t hash = 0;  // fnv1a64 of the file bytes
};

// One per run directory. Downstream stages verify artifact hashes and the
// config hash before consuming anything, so runs never silently mix
// incompatible pieces.
struct RunManifest {
  std::uint64_t config_hash = 0;
  std::string tool_version = kToolVersion;
  std::uint64_t master_seed = 0;
  std::vector<std::string> stages_done;
  std::map<std::string, ArtifactRef> artifacts;  // logical name -> file
};

nlohmann::json run_manifest_to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

void save_manifest(const std::string& file, const RunManifest& m);
RunManifest load_manifest(const std::string& file);

std::uint64_t file_hash(const std::string& file);

// Hashes the file at dir/name-relative path and records it.
void record_artifact(RunManifest& m, const std::string& dir, const std::string& name,
                     const std::string& rel_path);
// Throws std::runtime_error naming the first missing or modified artifact.
void check_artifacts(const RunManifest& m, const std::string& dir);

std::string read_text_file(const std::string& file);
void write_text_file(const std::string& file, const std::string& content);

}  // namespace pathrank
