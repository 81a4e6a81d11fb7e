#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/ala.hpp"
#include "deepact/balance.hpp"
#include "deepact/ingest.hpp"
#include "deepact/model/config.hpp"
#include "deepact/model/generate.hpp"
#include "json.hpp"

namespace deepact {

struct SynthSettings {
  std::size_t agents = 2000;
  std::string grammar = "reference";  // reference | shifted | path to a grammar file
  std::uint64_t city_seed = 2024;
};

struct FineTuneSettings {
  bool enabled = true;
  std::string grammar = "shifted";
  std::size_t samples = 1000;
  bool adapter = false;
  int freeze_epochs = 5;
  int epochs = 20;
};

struct PipelineConfig {
  std::filesystem::path artifacts = "artifacts";
  std::filesystem::path data;    // survey CSV; empty = synth output
  std::filesystem::path schema;  // empty = built-in
  std::filesystem::path zones;   // empty = synthetic city
  std::uint64_t seed = 42;
  SynthSettings synth;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  bool balance_enabled = true;
  BalanceConfig balance;
  ModelConfig model;  // attribute fields are filled from the schema
  TrainConfig train;
  LossWeights loss;
  SoftLabelConfig soft;
  FineTuneSettings finetune;
  SamplingConfig sampling;
  AlaConfig ala;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  DatasetSchema load_schema_or_default() const;
};

/// Reads the YAML config; unknown keys are rejected. Relative paths are
/// resolved against the config file's directory.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
PipelineConfig pipeline_config_from_yaml_text(const std::string& text, const std::filesystem::path& base = {});

nlohmann::json to_json(const PipelineConfig& c);
/// First 12 hex digits of SHA-256 over the canonical JSON form.
std::string config_hash(const PipelineConfig& c);

class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& p)
      : std::runtime_error("missing input artifact: " + p.string()), path(p) {}
  std::filesystem::path path;
};

struct RunManifest {
  std::string config_hash;
  std::string stage;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path relative to stage dir -> sha256
  double wall_seconds = 0.0;                   // reported, never written into the artifact tree
};

std::string file_sha256(const std::filesystem::path& p);

enum class Verbosity { Quiet, Normal, Verbose };

struct StageOptions {
  bool allow_stale = false;
  Verbosity verbosity = Verbosity::Normal;
  // stage-specific inputs overriding the artifact tree
  std::filesystem::path data;
  std::filesystem::path profiles;
  std::filesystem::path generated;
  std::filesystem::path truth;
  std::filesystem::path checkpoint;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth",    "ingest",   "balance", "train",   "finetune",
                                              "generate", "assign",   "evaluate"};
  return names;
}

/// Runs one stage and writes artifacts/<stage>/<hash>/ with a manifest.json.
RunManifest run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options = {});
std::vector<RunManifest> run_pipeline(const PipelineConfig& config, const StageOptions& options = {});

std::filesystem::path stage_dir(const PipelineConfig& config, const std::string& stage);

}  // namespace deepact
