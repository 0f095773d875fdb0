#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cirlab/checkpoint.hpp"
#include "cirlab/errors.hpp"
#include "cirlab/eval.hpp"

namespace cirl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Maps exceptions onto the exit-code convention.
template <typename Fn> int guarded(std::ostream &err, Fn &&fn) {
  try {
    return fn();
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError &e) {
    err << "format error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError &e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

StreamManifest read_manifest_file(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open stream manifest " + path.string());
  return read_manifest(in);
}

void check_manifest_matches(const StreamManifest &m, const RunConfig &cfg) {
  if (m.seed != cfg.stream.seed || m.scenario != cfg.stream.scenario ||
      m.n_experiences != cfg.stream.n_experiences)
    throw ConfigError("stream manifest (seed=" + std::to_string(m.seed) + ", scenario=" +
                      std::string(to_string(m.scenario)) + ", n_experiences=" +
                      std::to_string(m.n_experiences) + ") does not match the config");
}

void print_stats(std::ostream &out, const StreamStats &st, const RunConfig &cfg) {
  int repeated = 0;
  for (const auto &[c, n] : st.repetitions)
    if (n >= 2)
      ++repeated;
  out << "scenario " << to_string(cfg.stream.scenario) << ", seed " << cfg.stream.seed << '\n'
      << "experiences: " << st.labeled_histogram.size() << '\n'
      << "labeled samples: " << st.total_labeled << ", unlabeled samples: " << st.total_unlabeled
      << '\n'
      << "learnable classes seen: " << st.first_appearance.size() << " of "
      << cfg.stream.n_learnable << ", repeated: " << repeated << '\n'
      << "distractor samples in unlabeled stream: " << st.distractor_unlabeled << '\n';
  for (std::size_t t = 0; t < st.labeled_histogram.size(); ++t) {
    out << "  exp " << t << ": labeled {";
    bool first = true;
    for (const auto &[c, n] : st.labeled_histogram[t]) {
      out << (first ? "" : ", ") << c << ":" << n;
      first = false;
    }
    out << "} unlabeled classes " << st.unlabeled_histogram[t].size() << '\n';
  }
}

void save_checkpoint_file(const fs::path &path, const TrainerState &state) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write checkpoint " + path.string());
  save_checkpoint(out, state.model, &state.buffer);
}

std::string checkpoint_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "exp_%03d.ckpt", t);
  return buf;
}

int train_impl(const RunConfig &cfg, const fs::path &stream_path, const fs::path &out_dir,
               std::ostream &out) {
  const auto manifest = read_manifest_file(stream_path);
  check_manifest_matches(manifest, cfg);
  const Dataset dataset = load_dataset(cfg);
  auto [stream, test] = materialize(manifest, dataset);

  fs::create_directories(out_dir / "checkpoints");
  save_run_config(out_dir / "config.json", cfg);
  if (fs::absolute(stream_path) != fs::absolute(out_dir / "stream.tsv"))
    fs::copy_file(stream_path, out_dir / "stream.tsv", fs::copy_options::overwrite_existing);

  std::vector<std::string> checkpoints;
  std::ofstream log(out_dir / "train_log.jsonl");
  auto write_run_manifest = [&](bool complete) {
    json m;
    m["format"] = kRunManifestFormat;
    m["version"] = kRunManifestVersion;
    m["seed"] = cfg.train.seed;
    m["complete"] = complete;
    m["config"] = to_json(cfg);
    m["artifacts"] = {{"stream_manifest", "stream.tsv"},
                      {"config", "config.json"},
                      {"epoch_log", "train_log.jsonl"},
                      {"metrics_json", "metrics.json"},
                      {"metrics_table", "metrics.csv"},
                      {"checkpoints", checkpoints},
                      {"final_checkpoint", "model.ckpt"}};
    std::ofstream f(out_dir / "run_manifest.json");
    f << m.dump(2) << '\n';
  };
  write_run_manifest(false);

  const auto after = [&](const TrainerState &state, const ExperienceResult &res) {
    const int t = state.experience_index - 1;
    for (const auto &e : res.epochs)
      write_epoch_log_line(log, e);
    log.flush();
    const std::string name = "checkpoints/" + checkpoint_name(t);
    save_checkpoint_file(out_dir / name, state);
    checkpoints.push_back(name);
    write_run_manifest(false);
    out << "experience " << t << ": " << res.epochs.size() << " epochs, best " << res.best_epoch
        << ", +" << res.n_new_classes << " classes\n";
  };

  RunResult run = run_stream(stream, test, cfg.train, cfg.stream, nullptr, after);
  run.report.method = cfg.name;

  {
    std::ofstream f(out_dir / "metrics.json");
    write_metrics_json(f, run.report);
  }
  {
    std::ofstream f(out_dir / "metrics.csv");
    write_metrics_table(f, run.report);
  }
  save_checkpoint_file(out_dir / "model.ckpt", run.state);
  write_run_manifest(true);

  char buf[96];
  std::snprintf(buf, sizeof buf, "final accuracy %.4f, mean forgetting %.4f\n",
                run.report.final_accuracy, mean_forgetting(run.report.accuracy_matrix));
  out << buf;
  return kExitOk;
}

} // namespace

RunConfig resolve_config(const ConfigOptions &opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_run_config(opts.config_path);
  cfg = apply_overrides(cfg, opts.overrides);
  if (opts.seed) {
    cfg.stream.seed = *opts.seed;
    cfg.train.seed = *opts.seed;
  }
  if (opts.scenario)
    cfg.stream.scenario = parse_scenario(*opts.scenario);
  if (opts.zero_weights) {
    cfg.train.weights.alpha_l = 0.0;
    cfg.train.weights.alpha_u = 0.0;
    cfg.train.weights.beta = 0.0;
    cfg.train.weights.gamma = 0.0;
  }
  cfg.stream.validate();
  cfg.train.validate();
  return cfg;
}

int cmd_gen_stream(const ConfigOptions &opts, const fs::path &out_path, std::ostream &out,
                   std::ostream &err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    const Dataset dataset = load_dataset(cfg);
    const auto stream = build_stream(dataset, cfg.stream);
    const auto test = build_test_set(dataset, cfg.stream);
    const auto problems = validate_stream(stream, test, cfg.stream);
    if (!problems.empty()) {
      for (const auto &p : problems)
        err << "invalid stream: " << p << '\n';
      return kExitRuntime;
    }
    if (out_path.has_parent_path())
      fs::create_directories(out_path.parent_path());
    std::ofstream f(out_path);
    if (!f)
      throw ConfigError("cannot write " + out_path.string());
    write_manifest(f, stream, test, cfg.stream);
    print_stats(out, stream_statistics(stream, cfg.stream), cfg);
    return kExitOk;
  });
}

int cmd_validate_stream(const ConfigOptions &opts, const fs::path &stream_path, std::ostream &out,
                        std::ostream &err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    const auto manifest = read_manifest_file(stream_path);
    check_manifest_matches(manifest, cfg);
    const Dataset dataset = load_dataset(cfg);
    const auto [stream, test] = materialize(manifest, dataset);
    const auto problems = validate_stream(stream, test, cfg.stream);
    for (const auto &p : problems)
      err << "invalid stream: " << p << '\n';
    if (!problems.empty())
      return kExitRuntime;
    out << "stream OK: " << stream.size() << " experiences, " << test.samples.size()
        << " test samples, scenario " << to_string(cfg.stream.scenario) << '\n';
    return kExitOk;
  });
}

int cmd_train(const ConfigOptions &opts, const fs::path &stream_path, const fs::path &out_dir,
              std::ostream &out, std::ostream &err) {
  return guarded(err, [&] { return train_impl(resolve_config(opts), stream_path, out_dir, out); });
}

int cmd_train_from_manifest(const fs::path &manifest_path, const fs::path &out_dir,
                            std::ostream &out, std::ostream &err) {
  return guarded(err, [&] {
    std::ifstream in(manifest_path);
    if (!in)
      throw ConfigError("cannot open run manifest " + manifest_path.string());
    json m;
    try {
      in >> m;
    } catch (const json::exception &e) {
      throw FormatError(std::string("run manifest is not valid JSON: ") + e.what());
    }
    if (m.value("format", "") != kRunManifestFormat)
      throw FormatError("not a cirlab run manifest");
    if (m.value("version", 0) != kRunManifestVersion)
      throw FormatError("unsupported run manifest version");
    const RunConfig cfg = run_config_from_json(m.at("config"));
    const fs::path stream =
        manifest_path.parent_path() / m.at("artifacts").at("stream_manifest").get<std::string>();
    return train_impl(cfg, stream, out_dir, out);
  });
}

int cmd_eval(const ConfigOptions &opts, const fs::path &checkpoint_path,
             const fs::path &stream_path, std::ostream &out, std::ostream &err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    std::ifstream in(checkpoint_path, std::ios::binary);
    if (!in)
      throw ConfigError("cannot open checkpoint " + checkpoint_path.string());
    const Checkpoint ck = load_checkpoint(in);
    const auto manifest = read_manifest_file(stream_path);
    check_manifest_matches(manifest, cfg);
    const auto [stream, test] = materialize(manifest, load_dataset(cfg));

    std::vector<ClassId> known;
    for (ClassId c : ck.model.head_labels)
      if (std::find(test.classes.begin(), test.classes.end(), c) != test.classes.end())
        known.push_back(c);
    const auto bs = static_cast<std::size_t>(cfg.train.batch_size_eval);
    json j;
    j["test_samples"] = test.samples.size();
    j["head_classes"] = ck.model.n_classes();
    j["full_accuracy"] = evaluate(ck.model, test, test.classes, bs);
    j["seen_accuracy"] = known.empty() ? json(nullptr) : json(evaluate(ck.model, test, known, bs));
    out << j.dump(2) << '\n';
    return kExitOk;
  });
}

int cmd_compare(const std::vector<std::string> &reports, std::ostream &out, std::ostream &err) {
  return guarded(err, [&] {
    if (reports.size() < 2)
      throw ConfigError("compare needs at least two reports");
    std::vector<LabeledReport> loaded;
    for (const auto &arg : reports) {
      const auto eq = arg.find('=');
      const fs::path path = eq == std::string::npos ? arg : arg.substr(eq + 1);
      std::ifstream in(path);
      if (!in)
        throw ConfigError("cannot open report " + path.string());
      LabeledReport lr{"", read_metrics_json(in)};
      lr.label = eq == std::string::npos ? lr.report.method : arg.substr(0, eq);
      loaded.push_back(std::move(lr));
    }
    out << comparison_table(loaded);
    return kExitOk;
  });
}

} // namespace cirl::cli
