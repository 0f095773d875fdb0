#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cirl {

using ClassId = std::uint32_t;
using SampleId = std::uint64_t;

enum class ScenarioKind { S1, S2, S3 };

std::string_view to_string(ScenarioKind s);
ScenarioKind parse_scenario(std::string_view text);

struct StreamConfig {
  int n_experiences = 50;
  int n_learnable = 100;
  int n_distractor = 30;
  int classes_per_exp = 10;
  int labeled_per_exp = 500;
  int unlabeled_per_exp = 1000;
  ScenarioKind scenario = ScenarioKind::S1;
  std::uint64_t seed = 0;
  int d_in = 32;

  int n_classes() const { return n_learnable + n_distractor; }
  bool is_learnable(ClassId c) const { return c < static_cast<ClassId>(n_learnable); }

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const StreamConfig &, const StreamConfig &) = default;
};

// Knobs of the synthetic Gaussian-cluster generator. Pool sizes of 0 mean
// "size automatically from the stream config".
struct SyntheticConfig {
  double mean_scale = 1.0;  // class means ~ N(0, mean_scale^2 I)
  double noise_scale = 1.0; // isotropic sample noise
  int train_per_class = 0;
  int test_per_class = 40;

  friend bool operator==(const SyntheticConfig &, const SyntheticConfig &) = default;
};

struct Sample {
  SampleId id = 0;
  std::vector<double> features;
  std::optional<ClassId> label; // absent on the unlabeled stream
  ClassId true_label = 0;       // audit only, never read by training code
};

// Per-class pools; train and test pools never share a sample.
struct Dataset {
  int d_in = 0;
  std::vector<std::vector<Sample>> train; // indexed by ClassId
  std::vector<std::vector<Sample>> test;

  std::size_t n_classes() const { return train.size(); }
  // Lookup by id across both partitions; nullptr when absent.
  const Sample *find(SampleId id) const;
};

struct Experience {
  int index = 0;
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::vector<ClassId> present_classes; // sorted, from the labeled stream
};

struct TestSet {
  std::vector<Sample> samples;
  std::vector<ClassId> classes; // sorted
};

struct StreamStats {
  std::map<ClassId, int> first_appearance;
  std::map<ClassId, int> repetitions; // number of experiences a class is labeled in
  std::vector<std::map<ClassId, int>> labeled_histogram;
  std::vector<std::map<ClassId, int>> unlabeled_histogram; // by true_label
  int distractor_unlabeled = 0;
  std::size_t total_labeled = 0;
  std::size_t total_unlabeled = 0;
};

Dataset generate_synthetic_dataset(const StreamConfig &config, std::uint64_t seed,
                                   const SyntheticConfig &synth = {});

// Reads one subdirectory per class (sorted by name: the first n_learnable are
// learnable, the remaining n_distractor are distractors). Each regular file is
// either a netpbm image (P2/P3/P5/P6, flattened and scaled to [0,1]) or a
// text file with one whitespace/comma separated vector per line. Every vector
// must have d_in entries. The first test_per_class samples of each class after
// a seeded shuffle form the test partition.
Dataset ingest_directory(const std::filesystem::path &root, const StreamConfig &config,
                         int test_per_class, std::uint64_t seed);

// Class schedule used by build_stream: present classes per experience.
std::vector<std::vector<ClassId>> assign_classes(const StreamConfig &config);

std::vector<Experience> build_stream(const Dataset &dataset, const StreamConfig &config);
TestSet build_test_set(const Dataset &dataset, const StreamConfig &config);
StreamStats stream_statistics(const std::vector<Experience> &stream, const StreamConfig &config);

// Classes the unlabeled stream of experience t may draw from.
std::vector<ClassId> permitted_unlabeled_classes(const std::vector<std::vector<ClassId>> &schedule,
                                                 const StreamConfig &config, int t);

// Checks every stream invariant (sizes, balance, scenario containment, no
// labeled reuse, test disjointness). Returns human-readable violations; empty
// means valid.
std::vector<std::string> validate_stream(const std::vector<Experience> &stream,
                                         const TestSet &test, const StreamConfig &config);

// ---- stream manifest -------------------------------------------------------
//
//   cirlab-stream-manifest<TAB>v1<TAB>seed=<u64><TAB>scenario=S<k><TAB>n_experiences=<n>
//   <experience><TAB><split><TAB><sample id><TAB><true label><TAB><exposed label>
//
// split is one of labeled|unlabeled|test; exposed label is '-' when stripped;
// experience is '-' for test records.

inline constexpr std::string_view kManifestFormat = "cirlab-stream-manifest";
inline constexpr int kManifestVersion = 1;

struct ManifestRecord {
  int experience = -1; // -1 for test
  std::string split;
  SampleId sample_id = 0;
  ClassId true_label = 0;
  std::optional<ClassId> exposed_label;
};

struct StreamManifest {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  ScenarioKind scenario = ScenarioKind::S1;
  int n_experiences = 0;
  std::vector<ManifestRecord> records;
};

void write_manifest(std::ostream &out, const std::vector<Experience> &stream, const TestSet &test,
                    const StreamConfig &config);
StreamManifest read_manifest(std::istream &in);

// Rebuild experiences and test set from a manifest by looking samples up in
// the dataset the manifest was generated from.
std::pair<std::vector<Experience>, TestSet> materialize(const StreamManifest &manifest,
                                                        const Dataset &dataset);

} // namespace cirl
