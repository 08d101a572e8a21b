#pragma once

// Run configuration: one JSON document fully describes a run. Parsing rejects
// unknown keys and reports the offending key path; every default mirrors the
// published experimental settings.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "maskrec/data.hpp"
#include "maskrec/masking.hpp"
#include "maskrec/model.hpp"
#include "maskrec/protocols.hpp"
#include "maskrec/train.hpp"

namespace maskrec::config {

inline constexpr int kSchemaVersion = 1;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::string path;                  // csv only
  std::string tag = "synthetic";
  data::CsvSchema csv;
  data::SynthParams synthetic{6, 6, 3000, 6, 0, 0.1, 100.0};
  int num_classes = 0;  // 0: 1 + largest label
};

struct WindowConfig {
  std::size_t length = 100;  // one second at 100 Hz
  double overlap = 0.5;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  DatasetConfig dataset;
  WindowConfig window;
  data::SplitSpec split;
  masking::StrategyConfig strategy;
  double alpha = 0.5;
  model::ModelConfig model;
  std::size_t pretrain_epochs = 150;
  std::size_t pretrain_batch_size = 256;
  double pretrain_lr = 1e-3;
  train::FinetuneConfig finetune;
  std::size_t labels_per_class = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  protocols::SweepSettings sweep;
  std::string output_dir = "runs";
};

nlohmann::json to_json(const masking::StrategyConfig& s);
nlohmann::json to_json(const model::ModelConfig& m);
nlohmann::json to_json(const train::PretrainConfig& p);
nlohmann::json to_json(const train::FinetuneConfig& f);
nlohmann::json to_json(const protocols::SweepSettings& s);
nlohmann::json to_json(const protocols::ExperimentConfig& e);
nlohmann::json to_json(const RunConfig& c);

/// Throws ConfigError naming the key path of the first problem.
RunConfig from_json(const nlohmann::json& j);
/// Throws IoError if unreadable, ConfigError if malformed.
RunConfig load_config(const std::filesystem::path& path);

/// Applies `key.path=value` to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise. Throws ConfigError for keys
/// that do not exist in the schema.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Every leaf key of the default config as (dotted path, JSON value).
std::vector<std::pair<std::string, std::string>> flattened_defaults();

/// Experiment settings derived from a run config.
protocols::ExperimentConfig experiment_from(const RunConfig& c);

/// Recordings named by the dataset section. Throws ConfigError when a csv
/// source has no path, IoError / DataError from the loader.
std::vector<data::RawRecording> load_recordings(const RunConfig& c);

/// Segmented windows of every recording.
data::WindowSet load_windows(const RunConfig& c);

/// Split then z-score with train statistics. Fraction splits use
/// split.seed + run_index so repeated runs see different subject draws;
/// explicit splits are the same for every run.
protocols::SplitProvider make_split_provider(const RunConfig& c, data::WindowSet windows);

}  // namespace maskrec::config
