#pragma once

#include <filesystem>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace cirl::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;   // bad arguments, config or input files
inline constexpr int kExitRuntime = 2; // numerical failure, invalid stream, I/O during a run

inline constexpr std::string_view kRunManifestFormat = "cirlab-run-manifest";
inline constexpr int kRunManifestVersion = 1;

// Options common to subcommands that read a run config.
struct ConfigOptions {
  std::filesystem::path config_path; // empty: built-in defaults
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;  // sets stream.seed and train.seed
  std::optional<std::string> scenario;
  bool zero_weights = false; // alpha_l = alpha_u = beta = gamma = 0
};

RunConfig resolve_config(const ConfigOptions &opts);

int cmd_gen_stream(const ConfigOptions &opts, const std::filesystem::path &out_path,
                   std::ostream &out, std::ostream &err);

int cmd_validate_stream(const ConfigOptions &opts, const std::filesystem::path &stream_path,
                        std::ostream &out, std::ostream &err);

// Trains over the stream and writes into out_dir:
//   run_manifest.json, config.json, stream.tsv, train_log.jsonl,
//   metrics.json, metrics.csv, checkpoints/exp_NNN.ckpt, model.ckpt
int cmd_train(const ConfigOptions &opts, const std::filesystem::path &stream_path,
              const std::filesystem::path &out_dir, std::ostream &out, std::ostream &err);

// Re-runs a training run from its run_manifest.json into out_dir.
int cmd_train_from_manifest(const std::filesystem::path &manifest_path,
                            const std::filesystem::path &out_dir, std::ostream &out,
                            std::ostream &err);

// Accuracy of a checkpoint on the stream's test set.
int cmd_eval(const ConfigOptions &opts, const std::filesystem::path &checkpoint_path,
             const std::filesystem::path &stream_path, std::ostream &out, std::ostream &err);

// Each entry is a metrics.json path or "label=path".
int cmd_compare(const std::vector<std::string> &reports, std::ostream &out, std::ostream &err);

} // namespace cirl::cli
