#include "run_config.hpp"

#include <fstream>
#include <set>

#include "cirlab/errors.hpp"

namespace cirl::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json &j, const std::string &where, std::set<std::string> known) {
  if (!j.is_object())
    throw ConfigError("config: '" + where + "' must be an object");
  for (const auto &[key, value] : j.items())
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename T> void read(const json &j, const char *key, T &out, const std::string &where) {
  if (!j.contains(key))
    return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

} // namespace

json to_json(const RunConfig &cfg) {
  const auto &s = cfg.stream;
  const auto &d = cfg.dataset;
  const auto &t = cfg.train;
  json j;
  j["name"] = cfg.name;
  j["stream"] = {{"n_experiences", s.n_experiences},
                 {"n_learnable", s.n_learnable},
                 {"n_distractor", s.n_distractor},
                 {"classes_per_exp", s.classes_per_exp},
                 {"labeled_per_exp", s.labeled_per_exp},
                 {"unlabeled_per_exp", s.unlabeled_per_exp},
                 {"scenario", std::string(to_string(s.scenario))},
                 {"seed", s.seed},
                 {"d_in", s.d_in}};
  j["dataset"] = {{"source", d.source == DatasetSource::Synthetic ? "synthetic" : "directory"},
                  {"path", d.path},
                  {"mean_scale", d.synthetic.mean_scale},
                  {"noise_scale", d.synthetic.noise_scale},
                  {"train_per_class", d.synthetic.train_per_class},
                  {"test_per_class", d.synthetic.test_per_class}};
  j["train"] = {{"lr", t.lr},
                {"scheduler_step", t.scheduler_step},
                {"scheduler_gamma", t.scheduler_gamma},
                {"batch_size_train", t.batch_size_train},
                {"batch_size_eval", t.batch_size_eval},
                {"max_epochs", t.max_epochs},
                {"early_stop_patience", t.early_stop_patience},
                {"val_fraction", t.val_fraction},
                {"tau", t.tau},
                {"buffer_capacity", t.buffer_capacity},
                {"hidden", t.hidden},
                {"head_policy", std::string(to_string(t.head_policy))},
                {"method", std::string(to_string(t.method))},
                {"reset_optimizer", t.reset_optimizer},
                {"seed", t.seed},
                {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
                {"weights",
                 {{"alpha_l", t.weights.alpha_l},
                  {"alpha_u", t.weights.alpha_u},
                  {"beta", t.weights.beta},
                  {"gamma", t.weights.gamma},
                  {"temperature", t.weights.temperature}}}};
  return j;
}

RunConfig run_config_from_json(const json &j) {
  RunConfig cfg;
  reject_unknown(j, "", {"name", "stream", "dataset", "train"});
  read(j, "name", cfg.name, "");

  if (j.contains("stream")) {
    const auto &s = j.at("stream");
    reject_unknown(s, "stream",
                   {"n_experiences", "n_learnable", "n_distractor", "classes_per_exp",
                    "labeled_per_exp", "unlabeled_per_exp", "scenario", "seed", "d_in"});
    read(s, "n_experiences", cfg.stream.n_experiences, "stream");
    read(s, "n_learnable", cfg.stream.n_learnable, "stream");
    read(s, "n_distractor", cfg.stream.n_distractor, "stream");
    read(s, "classes_per_exp", cfg.stream.classes_per_exp, "stream");
    read(s, "labeled_per_exp", cfg.stream.labeled_per_exp, "stream");
    read(s, "unlabeled_per_exp", cfg.stream.unlabeled_per_exp, "stream");
    read(s, "seed", cfg.stream.seed, "stream");
    read(s, "d_in", cfg.stream.d_in, "stream");
    std::string scenario(to_string(cfg.stream.scenario));
    read(s, "scenario", scenario, "stream");
    cfg.stream.scenario = parse_scenario(scenario);
  }

  if (j.contains("dataset")) {
    const auto &d = j.at("dataset");
    reject_unknown(d, "dataset",
                   {"source", "path", "mean_scale", "noise_scale", "train_per_class",
                    "test_per_class"});
    std::string source = "synthetic";
    read(d, "source", source, "dataset");
    if (source == "synthetic")
      cfg.dataset.source = DatasetSource::Synthetic;
    else if (source == "directory")
      cfg.dataset.source = DatasetSource::Directory;
    else
      throw ConfigError("config: dataset.source must be 'synthetic' or 'directory'");
    read(d, "path", cfg.dataset.path, "dataset");
    read(d, "mean_scale", cfg.dataset.synthetic.mean_scale, "dataset");
    read(d, "noise_scale", cfg.dataset.synthetic.noise_scale, "dataset");
    read(d, "train_per_class", cfg.dataset.synthetic.train_per_class, "dataset");
    read(d, "test_per_class", cfg.dataset.synthetic.test_per_class, "dataset");
  }

  if (j.contains("train")) {
    const auto &t = j.at("train");
    reject_unknown(t, "train",
                   {"lr", "scheduler_step", "scheduler_gamma", "batch_size_train",
                    "batch_size_eval", "max_epochs", "early_stop_patience", "val_fraction", "tau",
                    "buffer_capacity", "hidden", "head_policy", "method", "reset_optimizer",
                    "seed", "adam", "weights"});
    auto &tc = cfg.train;
    read(t, "lr", tc.lr, "train");
    read(t, "scheduler_step", tc.scheduler_step, "train");
    read(t, "scheduler_gamma", tc.scheduler_gamma, "train");
    read(t, "batch_size_train", tc.batch_size_train, "train");
    read(t, "batch_size_eval", tc.batch_size_eval, "train");
    read(t, "max_epochs", tc.max_epochs, "train");
    read(t, "early_stop_patience", tc.early_stop_patience, "train");
    read(t, "val_fraction", tc.val_fraction, "train");
    read(t, "tau", tc.tau, "train");
    read(t, "buffer_capacity", tc.buffer_capacity, "train");
    read(t, "hidden", tc.hidden, "train");
    read(t, "reset_optimizer", tc.reset_optimizer, "train");
    read(t, "seed", tc.seed, "train");
    std::string head(to_string(tc.head_policy)), method(to_string(tc.method));
    read(t, "head_policy", head, "train");
    read(t, "method", method, "train");
    tc.head_policy = parse_head_policy(head);
    tc.method = parse_method(method);
    if (t.contains("adam")) {
      const auto &a = t.at("adam");
      reject_unknown(a, "train.adam", {"beta1", "beta2", "eps"});
      read(a, "beta1", tc.adam.beta1, "train.adam");
      read(a, "beta2", tc.adam.beta2, "train.adam");
      read(a, "eps", tc.adam.eps, "train.adam");
    }
    if (t.contains("weights")) {
      const auto &w = t.at("weights");
      reject_unknown(w, "train.weights", {"alpha_l", "alpha_u", "beta", "gamma", "temperature"});
      read(w, "alpha_l", tc.weights.alpha_l, "train.weights");
      read(w, "alpha_u", tc.weights.alpha_u, "train.weights");
      read(w, "beta", tc.weights.beta, "train.weights");
      read(w, "gamma", tc.weights.gamma, "train.weights");
      read(w, "temperature", tc.weights.temperature, "train.weights");
    }
  }

  cfg.stream.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path &path, const RunConfig &cfg) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write config file " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

RunConfig apply_overrides(const RunConfig &cfg, const std::vector<std::string> &overrides) {
  if (overrides.empty())
    return cfg;
  json j = to_json(cfg);
  for (const auto &ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded())
      value = raw;

    json *node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (!node->is_object() || !node->contains(part))
        throw ConfigError("override: unknown key '" + key + "'");
      node = &(*node)[part];
      if (dot == std::string::npos)
        break;
      start = dot + 1;
    }
    *node = value;
  }
  return run_config_from_json(j);
}

Dataset load_dataset(const RunConfig &cfg) {
  if (cfg.dataset.source == DatasetSource::Directory) {
    if (cfg.dataset.path.empty())
      throw ConfigError("dataset.source is 'directory' but dataset.path is empty");
    return ingest_directory(cfg.dataset.path, cfg.stream, cfg.dataset.synthetic.test_per_class,
                            cfg.stream.seed);
  }
  return generate_synthetic_dataset(cfg.stream, cfg.stream.seed, cfg.dataset.synthetic);
}

} // namespace cirl::cli
