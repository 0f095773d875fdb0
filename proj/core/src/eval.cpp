#include "cirlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cirlab/errors.hpp"

namespace cirl {

using nlohmann::json;

std::vector<ClassId> predict(const ModelState &model, const Matrix &x) {
  std::vector<ClassId> out(x.rows(), 0);
  if (model.n_classes() == 0)
    throw EvaluationError("predict: model head has no classes");
  const Matrix z = logits_for(model, x);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (row[k] > row[best] ||
          (row[k] == row[best] && model.head_labels[k] < model.head_labels[best]))
        best = k;
    }
    out[r] = model.head_labels[best];
  }
  return out;
}

double evaluate(const ModelState &model, const TestSet &test, std::span<const ClassId> restrict_to,
                std::size_t batch_size) {
  if (restrict_to.empty())
    throw EvaluationError("evaluate: empty class restriction");
  if (batch_size == 0)
    throw EvaluationError("evaluate: batch size must be positive");
  const std::set<ClassId> allowed(restrict_to.begin(), restrict_to.end());
  std::vector<const Sample *> selected;
  for (const auto &s : test.samples)
    if (allowed.count(s.true_label))
      selected.push_back(&s);
  if (selected.empty())
    throw EvaluationError("evaluate: no test samples for the requested classes");

  std::size_t correct = 0;
  for (std::size_t start = 0; start < selected.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, selected.size() - start);
    Matrix x(n, model.d_in());
    for (std::size_t i = 0; i < n; ++i) {
      const auto &f = selected[start + i]->features;
      if (f.size() != model.d_in())
        throw ShapeError("evaluate: test sample dimension mismatch");
      std::copy(f.begin(), f.end(), x.row(i).begin());
    }
    const auto pred = predict(model, x);
    for (std::size_t i = 0; i < n; ++i)
      if (pred[i] == selected[start + i]->true_label)
        ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(selected.size());
}

double scenario_average(std::span<const double> finals) {
  if (finals.empty())
    throw EvaluationError("scenario_average: no scenario results");
  return std::accumulate(finals.begin(), finals.end(), 0.0) / static_cast<double>(finals.size());
}

std::vector<std::optional<double>>
forgetting_summary(const std::vector<std::vector<std::optional<double>>> &matrix) {
  std::size_t n_cohorts = 0;
  for (const auto &row : matrix)
    n_cohorts = std::max(n_cohorts, row.size());
  std::vector<std::optional<double>> out(n_cohorts);
  if (matrix.empty())
    return out;
  const auto &last = matrix.back();
  for (std::size_t k = 0; k < n_cohorts; ++k) {
    std::optional<double> best;
    for (const auto &row : matrix)
      if (k < row.size() && row[k])
        best = best ? std::max(*best, *row[k]) : *row[k];
    if (best && k < last.size() && last[k])
      out[k] = *best - *last[k];
  }
  return out;
}

double mean_forgetting(const std::vector<std::vector<std::optional<double>>> &matrix) {
  double sum = 0.0;
  int n = 0;
  for (const auto &f : forgetting_summary(matrix))
    if (f) {
      sum += *f;
      ++n;
    }
  return n == 0 ? 0.0 : sum / n;
}

void record_experience(MetricsReport &report, const ModelState &model, const TestSet &test, int t,
                       std::span<const ClassId> present, std::span<const ClassId> seen,
                       std::size_t batch_size) {
  ClassId max_class = 0;
  for (const auto &s : test.samples)
    max_class = std::max(max_class, s.true_label);
  for (ClassId c : present)
    max_class = std::max(max_class, c);
  if (report.class_cohort.size() <= max_class)
    report.class_cohort.resize(static_cast<std::size_t>(max_class) + 1, -1);
  for (ClassId c : present)
    if (report.class_cohort[c] < 0)
      report.class_cohort[c] = t;

  const auto tu = static_cast<std::size_t>(t);
  std::vector<std::optional<double>> row(tu + 1);
  for (std::size_t k = 0; k <= tu; ++k) {
    std::vector<ClassId> cohort;
    for (ClassId c = 0; c < report.class_cohort.size(); ++c)
      if (report.class_cohort[c] == static_cast<int>(k))
        cohort.push_back(c);
    const bool has_test = std::any_of(test.samples.begin(), test.samples.end(), [&](const auto &s) {
      return std::find(cohort.begin(), cohort.end(), s.true_label) != cohort.end();
    });
    if (!cohort.empty() && has_test)
      row[k] = evaluate(model, test, cohort, batch_size);
  }
  for (auto &r : report.accuracy_matrix)
    r.resize(tu + 1);
  report.accuracy_matrix.push_back(std::move(row));

  std::vector<ClassId> seen_with_test;
  for (ClassId c : seen)
    if (std::find(test.classes.begin(), test.classes.end(), c) != test.classes.end())
      seen_with_test.push_back(c);
  report.seen_accuracy.push_back(
      seen_with_test.empty() ? 0.0 : evaluate(model, test, seen_with_test, batch_size));
  report.full_accuracy.push_back(evaluate(model, test, test.classes, batch_size));
  report.final_accuracy = report.full_accuracy.back();
}

void write_metrics_json(std::ostream &out, const MetricsReport &report) {
  json j;
  j["format"] = kMetricsFormat;
  j["version"] = report.version;
  j["method"] = report.method;
  j["scenario"] = to_string(report.scenario);
  j["seed"] = report.seed;
  j["class_cohort"] = report.class_cohort;
  json matrix = json::array();
  for (const auto &row : report.accuracy_matrix) {
    json jr = json::array();
    for (const auto &v : row)
      jr.push_back(v ? json(*v) : json(nullptr));
    matrix.push_back(std::move(jr));
  }
  j["accuracy_matrix"] = std::move(matrix);
  j["seen_accuracy"] = report.seen_accuracy;
  j["full_accuracy"] = report.full_accuracy;
  j["final_accuracy"] = report.final_accuracy;
  j["mean_forgetting"] = mean_forgetting(report.accuracy_matrix);
  out << j.dump(2) << '\n';
}

MetricsReport read_metrics_json(std::istream &in) {
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw FormatError(std::string("metrics report is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kMetricsFormat)
      throw FormatError("not a cirlab metrics report");
    MetricsReport r;
    r.version = j.at("version").get<int>();
    r.method = j.at("method").get<std::string>();
    r.scenario = parse_scenario(j.at("scenario").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.class_cohort = j.at("class_cohort").get<std::vector<int>>();
    for (const auto &jr : j.at("accuracy_matrix")) {
      std::vector<std::optional<double>> row;
      for (const auto &v : jr)
        row.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      r.accuracy_matrix.push_back(std::move(row));
    }
    r.seen_accuracy = j.at("seen_accuracy").get<std::vector<double>>();
    r.full_accuracy = j.at("full_accuracy").get<std::vector<double>>();
    r.final_accuracy = j.at("final_accuracy").get<double>();
    return r;
  } catch (const json::exception &e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

void write_metrics_table(std::ostream &out, const MetricsReport &report, char delim) {
  char buf[32];
  out << "after_experience";
  const std::size_t n = report.accuracy_matrix.size();
  for (std::size_t k = 0; k < n; ++k)
    out << delim << "cohort_" << k;
  out << delim << "seen_accuracy" << delim << "full_accuracy\n";
  for (std::size_t t = 0; t < n; ++t) {
    out << t;
    for (std::size_t k = 0; k < n; ++k) {
      out << delim;
      const auto &row = report.accuracy_matrix[t];
      if (k < row.size() && row[k]) {
        std::snprintf(buf, sizeof buf, "%.4f", *row[k]);
        out << buf;
      }
    }
    std::snprintf(buf, sizeof buf, "%.4f", report.seen_accuracy.at(t));
    out << delim << buf;
    std::snprintf(buf, sizeof buf, "%.4f", report.full_accuracy.at(t));
    out << delim << buf << '\n';
  }
}

std::string comparison_table(std::span<const LabeledReport> reports) {
  if (reports.size() < 2)
    throw EvaluationError("compare: at least two reports are required");
  for (const auto &r : reports)
    if (r.report.version != reports.front().report.version)
      throw FormatError("compare: reports mix format versions " +
                        std::to_string(reports.front().report.version) + " and " +
                        std::to_string(r.report.version));

  // label -> scenario -> finals (several seeds are averaged)
  std::vector<std::string> labels;
  std::map<std::string, std::map<ScenarioKind, std::vector<double>>> finals;
  std::set<ScenarioKind> scenarios;
  for (const auto &r : reports) {
    if (!finals.count(r.label))
      labels.push_back(r.label);
    finals[r.label][r.report.scenario].push_back(r.report.final_accuracy);
    scenarios.insert(r.report.scenario);
  }

  auto cell = [&](const std::string &label, std::optional<ScenarioKind> s) -> std::optional<double> {
    const auto &by_scenario = finals.at(label);
    if (s) {
      const auto it = by_scenario.find(*s);
      if (it == by_scenario.end())
        return std::nullopt;
      return 100.0 * scenario_average(it->second);
    }
    std::vector<double> per;
    for (const auto &[sc, v] : by_scenario)
      per.push_back(scenario_average(v));
    return 100.0 * scenario_average(per);
  };

  std::vector<std::optional<ScenarioKind>> columns(scenarios.begin(), scenarios.end());
  columns.push_back(std::nullopt);

  std::size_t label_width = 6;
  for (const auto &l : labels)
    label_width = std::max(label_width, l.size());

  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_width), "Method");
  os << buf;
  for (const auto &c : columns) {
    const std::string title =
        c ? "Scenario " + std::string(to_string(*c)).substr(1) : std::string("Average Accuracy");
    std::snprintf(buf, sizeof buf, " | %-18s", title.c_str());
    os << buf;
  }
  os << '\n';

  const std::string &reference = labels.front();
  for (const auto &label : labels) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_width), label.c_str());
    os << buf;
    for (const auto &c : columns) {
      const auto v = cell(label, c);
      std::string text = "n/a";
      if (v) {
        std::snprintf(buf, sizeof buf, "%.2f", *v);
        text = buf;
        const auto ref = cell(reference, c);
        if (label != reference && ref) {
          std::snprintf(buf, sizeof buf, " (%+.2f)", *v - *ref);
          text += buf;
        }
      }
      std::snprintf(buf, sizeof buf, " | %-18s", text.c_str());
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

} // namespace cirl
