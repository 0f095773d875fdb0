#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cirlab/model.hpp"
#include "cirlab/stream.hpp"

namespace cirl {

inline constexpr std::string_view kMetricsFormat = "cirlab-metrics";
inline constexpr int kMetricsVersion = 1;

// Accuracy bookkeeping for one run over one stream.
//
// Cohort k groups the classes whose first labeled appearance is experience k.
// accuracy_matrix[t][k] is the test accuracy on cohort k after training on
// experience t; it is empty for cohorts introduced after t and for cohorts
// with no classes.
struct MetricsReport {
  int version = kMetricsVersion;
  std::string method;
  ScenarioKind scenario = ScenarioKind::S1;
  std::uint64_t seed = 0;
  std::vector<int> class_cohort; // indexed by ClassId, -1 when never seen
  std::vector<std::vector<std::optional<double>>> accuracy_matrix;
  std::vector<double> seen_accuracy; // classes seen so far, per experience
  std::vector<double> full_accuracy; // whole test set, per experience
  double final_accuracy = 0.0;

  friend bool operator==(const MetricsReport &, const MetricsReport &) = default;
};

// Predicted ClassId per row: argmax over the head, ties to the smallest ClassId.
std::vector<ClassId> predict(const ModelState &model, const Matrix &x);

// Fraction of test samples with a class in restrict_to that the model labels
// correctly. Results do not depend on batch_size. Throws EvaluationError when
// the restriction is empty or selects no test sample.
double evaluate(const ModelState &model, const TestSet &test, std::span<const ClassId> restrict_to,
                std::size_t batch_size = 256);

// Arithmetic mean of per-scenario final accuracies.
double scenario_average(std::span<const double> finals);

// Per cohort: best accuracy over the rows where it is defined minus its
// last-row accuracy. Empty for cohorts never defined.
std::vector<std::optional<double>>
forgetting_summary(const std::vector<std::vector<std::optional<double>>> &matrix);

// Mean over defined cohorts of forgetting_summary; 0 when none are defined.
double mean_forgetting(const std::vector<std::vector<std::optional<double>>> &matrix);

// Appends row t of the report after training on experience `t`. `seen` lists
// the classes seen so far; cohorts are assigned from first appearance.
void record_experience(MetricsReport &report, const ModelState &model, const TestSet &test,
                       int t, std::span<const ClassId> present, std::span<const ClassId> seen,
                       std::size_t batch_size);

// JSON document (stable key order and number formatting).
void write_metrics_json(std::ostream &out, const MetricsReport &report);
MetricsReport read_metrics_json(std::istream &in);

// Delimiter-separated accuracy matrix with a seen/full accuracy column.
void write_metrics_table(std::ostream &out, const MetricsReport &report, char delim = ',');

struct LabeledReport {
  std::string label; // row name; reports sharing a label and scenario are averaged
  MetricsReport report;
};

// Rows per label, columns per scenario plus the scenario average, in percent.
// The first label is the reference row; every other row carries signed
// deltas against it. Throws FormatError when the reports disagree on format
// version and EvaluationError when fewer than two reports are given.
std::string comparison_table(std::span<const LabeledReport> reports);

} // namespace cirl
