#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirlab/stream.hpp"
#include "cirlab/trainer.hpp"

namespace cirl::cli {

enum class DatasetSource { Synthetic, Directory };

struct DatasetConfig {
  DatasetSource source = DatasetSource::Synthetic;
  std::string path; // class-per-subdirectory root for Directory
  SyntheticConfig synthetic;

  friend bool operator==(const DatasetConfig &, const DatasetConfig &) = default;
};

// Everything a run depends on. Serialised with every field spelled out so no
// default stays implicit in a saved manifest.
struct RunConfig {
  std::string name = "cir";
  StreamConfig stream;
  DatasetConfig dataset;
  TrainConfig train;

  friend bool operator==(const RunConfig &, const RunConfig &) = default;
};

nlohmann::json to_json(const RunConfig &cfg);
// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json &j);

RunConfig load_run_config(const std::filesystem::path &path);
void save_run_config(const std::filesystem::path &path, const RunConfig &cfg);

// Applies "dotted.key=value" overrides. The value is parsed as JSON when it
// parses, otherwise taken as a string.
RunConfig apply_overrides(const RunConfig &cfg, const std::vector<std::string> &overrides);

Dataset load_dataset(const RunConfig &cfg);

} // namespace cirl::cli
