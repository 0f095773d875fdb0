#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

void add_config_options(CLI::App *cmd, cirl::cli::ConfigOptions &opts) {
  cmd->add_option("-c,--config", opts.config_path, "Run configuration (JSON)");
  cmd->add_option("--set", opts.overrides, "Override a config value: dotted.key=value")
      ->take_all();
  cmd->add_option("--seed", opts.seed, "Seed for both the stream and training");
  cmd->add_option("--scenario", opts.scenario, "Scenario S1, S2 or S3");
}

} // namespace

int main(int argc, char **argv) {
  using namespace cirl::cli;
  CLI::App app{"cirlab: class-incremental continual learning with repetition"};
  app.require_subcommand(1);

  ConfigOptions opts;
  std::filesystem::path out_path, stream_path, out_dir, checkpoint_path, manifest_path;
  std::vector<std::string> reports;

  auto *gen = app.add_subcommand("gen-stream", "Generate a stream manifest");
  add_config_options(gen, opts);
  gen->add_option("-o,--out", out_path, "Output manifest path")->required();

  auto *validate = app.add_subcommand("validate-stream", "Check a stream manifest");
  add_config_options(validate, opts);
  validate->add_option("-s,--stream", stream_path, "Stream manifest")->required();

  auto *train = app.add_subcommand("train", "Train over a stream and write run artifacts");
  add_config_options(train, opts);
  train->add_option("-s,--stream", stream_path, "Stream manifest");
  train->add_option("--manifest", manifest_path, "Re-run from a run_manifest.json");
  train->add_option("-o,--out", out_dir, "Output directory")->required();
  train->add_flag("--zero-weights", opts.zero_weights,
                  "Set alpha_l, alpha_u, beta and gamma to 0 (plain fine-tuning objective)");

  auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on a stream's test set");
  add_config_options(eval, opts);
  eval->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  eval->add_option("-s,--stream", stream_path, "Stream manifest")->required();

  auto *compare = app.add_subcommand("compare", "Tabulate metrics reports");
  compare->add_option("reports", reports, "metrics.json paths, optionally label=path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (*gen)
    return cmd_gen_stream(opts, out_path, std::cout, std::cerr);
  if (*validate)
    return cmd_validate_stream(opts, stream_path, std::cout, std::cerr);
  if (*train) {
    if (!manifest_path.empty())
      return cmd_train_from_manifest(manifest_path, out_dir, std::cout, std::cerr);
    if (stream_path.empty()) {
      std::cerr << "train: --stream or --manifest is required\n";
      return kExitUsage;
    }
    return cmd_train(opts, stream_path, out_dir, std::cout, std::cerr);
  }
  if (*eval)
    return cmd_eval(opts, checkpoint_path, stream_path, std::cout, std::cerr);
  if (*compare)
    return cmd_compare(reports, std::cout, std::cerr);
  return kExitUsage;
}
