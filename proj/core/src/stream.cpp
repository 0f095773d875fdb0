#include "cirlab/stream.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cirlab/errors.hpp"
#include "cirlab/rng.hpp"

namespace cirl {

namespace {

// Stream tags for derive_seed; changing them changes every generated stream.
constexpr std::uint64_t kTagMeans = 1;
constexpr std::uint64_t kTagSchedule = 7;
constexpr std::uint64_t kTagAllocation = 11;
constexpr std::uint64_t kTagIngest = 13;
constexpr std::uint64_t kTagTrainPool = 1000;
constexpr std::uint64_t kTagTestPool = 500000;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

std::vector<int> balanced_counts(int total, std::size_t n_bins, Rng &rng) {
  std::vector<int> counts(n_bins, 0);
  if (n_bins == 0)
    return counts;
  const int base = total / static_cast<int>(n_bins);
  const int rem = total % static_cast<int>(n_bins);
  std::fill(counts.begin(), counts.end(), base);
  std::vector<std::size_t> order(n_bins);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  for (int i = 0; i < rem; ++i)
    ++counts[order[static_cast<std::size_t>(i)]];
  return counts;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
    ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
    --e;
  return std::string(s.substr(b, e - b));
}

} // namespace

std::string_view to_string(ScenarioKind s) {
  switch (s) {
  case ScenarioKind::S1:
    return "S1";
  case ScenarioKind::S2:
    return "S2";
  case ScenarioKind::S3:
    return "S3";
  }
  return "S?";
}

ScenarioKind parse_scenario(std::string_view text) {
  if (text == "S1" || text == "1" || text == "s1")
    return ScenarioKind::S1;
  if (text == "S2" || text == "2" || text == "s2")
    return ScenarioKind::S2;
  if (text == "S3" || text == "3" || text == "s3")
    return ScenarioKind::S3;
  throw ConfigError("unknown scenario '" + std::string(text) + "' (expected S1, S2 or S3)");
}

void StreamConfig::validate() const {
  auto fail = [](const std::string &msg) { throw ConfigError("stream config: " + msg); };
  if (n_experiences < 1)
    fail("n_experiences must be >= 1");
  if (n_learnable < 1)
    fail("n_learnable must be >= 1");
  if (n_distractor < 0)
    fail("n_distractor must be >= 0");
  if (d_in < 1)
    fail("d_in must be >= 1");
  if (classes_per_exp < 1 || classes_per_exp > n_learnable)
    fail("classes_per_exp must lie in [1, n_learnable]");
  if (labeled_per_exp < classes_per_exp)
    fail("labeled_per_exp must be >= classes_per_exp so every present class has a sample");
  if (unlabeled_per_exp < 0)
    fail("unlabeled_per_exp must be >= 0");
  if (static_cast<long long>(n_experiences) * classes_per_exp < n_learnable)
    fail("n_experiences * classes_per_exp must be >= n_learnable to cover every class");
}

const Sample *Dataset::find(SampleId id) const {
  for (const auto *part : {&train, &test})
    for (const auto &pool : *part)
      for (const auto &s : pool)
        if (s.id == id)
          return &s;
  return nullptr;
}

Dataset generate_synthetic_dataset(const StreamConfig &config, std::uint64_t seed,
                                   const SyntheticConfig &synth) {
  if (config.n_classes() < 1)
    throw ConfigError("synthetic dataset: zero classes");
  if (config.d_in < 1)
    throw ConfigError("synthetic dataset: zero dimension");
  if (config.classes_per_exp < 1)
    throw ConfigError("synthetic dataset: classes_per_exp must be >= 1");
  if (synth.noise_scale < 0.0 || synth.mean_scale < 0.0)
    throw ConfigError("synthetic dataset: scales must be non-negative");
  if (synth.train_per_class < 0 || synth.test_per_class < 0)
    throw ConfigError("synthetic dataset: pool sizes must be non-negative");

  // Upper bound on what build_stream can draw from one class.
  int train_per_class = synth.train_per_class;
  if (train_per_class == 0)
    train_per_class = std::max(
        1, config.n_experiences * (ceil_div(config.labeled_per_exp, config.classes_per_exp) +
                                   ceil_div(config.unlabeled_per_exp, config.classes_per_exp)));

  const auto n_classes = static_cast<std::size_t>(config.n_classes());
  const auto dim = static_cast<std::size_t>(config.d_in);

  Rng mean_rng(derive_seed(seed, kTagMeans));
  std::vector<std::vector<double>> means(n_classes, std::vector<double>(dim));
  for (auto &m : means)
    for (auto &v : m)
      v = synth.mean_scale * mean_rng.normal();

  Dataset ds;
  ds.d_in = config.d_in;
  ds.train.resize(n_classes);
  ds.test.resize(n_classes);

  SampleId next_id = 0;
  auto draw = [&](ClassId c, Rng &rng) {
    Sample s;
    s.id = next_id++;
    s.true_label = c;
    s.features.resize(dim);
    for (std::size_t k = 0; k < dim; ++k)
      s.features[k] = means[c][k] + synth.noise_scale * rng.normal();
    return s;
  };

  for (ClassId c = 0; c < n_classes; ++c) {
    Rng rng(derive_seed(seed, kTagTrainPool + c));
    ds.train[c].reserve(static_cast<std::size_t>(train_per_class));
    for (int i = 0; i < train_per_class; ++i)
      ds.train[c].push_back(draw(c, rng));
  }
  for (ClassId c = 0; c < n_classes; ++c) {
    Rng rng(derive_seed(seed, kTagTestPool + c));
    ds.test[c].reserve(static_cast<std::size_t>(synth.test_per_class));
    for (int i = 0; i < synth.test_per_class; ++i)
      ds.test[c].push_back(draw(c, rng));
  }
  return ds;
}

namespace {

std::vector<std::vector<double>> read_netpbm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError("cannot open " + path.string());
  auto next_token = [&in]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty())
          break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  const std::string magic = next_token();
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  const bool binary = (magic == "P5" || magic == "P6");
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw FormatError(path.string() + ": unsupported netpbm magic '" + magic + "'");
  const long width = std::stol(next_token());
  const long height = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    throw FormatError(path.string() + ": bad netpbm header");
  const auto n = static_cast<std::size_t>(width * height * channels);
  std::vector<double> v(n);
  if (binary) {
    const int bytes = maxval < 256 ? 1 : 2;
    for (std::size_t i = 0; i < n; ++i) {
      unsigned value = 0;
      for (int b = 0; b < bytes; ++b) {
        const int ch = in.get();
        if (ch == EOF)
          throw FormatError(path.string() + ": truncated pixel data");
        value = (value << 8) | static_cast<unsigned>(ch);
      }
      v[i] = static_cast<double>(value) / static_cast<double>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tok = next_token();
      if (tok.empty())
        throw FormatError(path.string() + ": truncated pixel data");
      v[i] = std::stod(tok) / static_cast<double>(maxval);
    }
  }
  return {std::move(v)};
}

std::vector<std::vector<double>> read_vectors(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw FormatError("cannot open " + path.string());
  std::vector<std::vector<double>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#')
      continue;
    std::istringstream ls(t);
    std::vector<double> v;
    double x;
    while (ls >> x)
      v.push_back(x);
    if (!ls.eof())
      throw FormatError(path.string() + ": non-numeric entry in '" + t + "'");
    out.push_back(std::move(v));
  }
  return out;
}

} // namespace

Dataset ingest_directory(const std::filesystem::path &root, const StreamConfig &config,
                         int test_per_class, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw ConfigError("dataset directory not found: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto &entry : fs::directory_iterator(root))
    if (entry.is_directory())
      class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() != static_cast<std::size_t>(config.n_classes()))
    throw ConfigError("dataset directory has " + std::to_string(class_dirs.size()) +
                      " class subdirectories, config expects " +
                      std::to_string(config.n_classes()));

  Dataset ds;
  ds.d_in = config.d_in;
  ds.train.resize(class_dirs.size());
  ds.test.resize(class_dirs.size());
  std::vector<std::vector<std::vector<double>>> per_class(class_dirs.size());
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto &entry : fs::directory_iterator(class_dirs[c]))
      if (entry.is_regular_file())
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto &f : files) {
      const auto ext = f.extension().string();
      auto vecs = (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") ? read_netpbm(f)
                                                                     : read_vectors(f);
      for (auto &v : vecs) {
        if (v.size() != static_cast<std::size_t>(config.d_in))
          throw ShapeError(f.string() + ": vector of length " + std::to_string(v.size()) +
                           ", expected d_in=" + std::to_string(config.d_in));
        per_class[c].push_back(std::move(v));
      }
    }
    if (static_cast<int>(per_class[c].size()) <= test_per_class)
      throw GenerationError("class directory " + class_dirs[c].filename().string() +
                            " has too few samples for the test partition");
  }

  SampleId next_id = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    Rng rng(derive_seed(seed, kTagIngest + c));
    auto &vecs = per_class[c];
    std::vector<std::size_t> order(vecs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < order.size(); ++i) {
      Sample s;
      s.id = next_id++;
      s.true_label = static_cast<ClassId>(c);
      s.features = vecs[order[i]];
      (static_cast<int>(i) < test_per_class ? ds.test : ds.train)[c].push_back(std::move(s));
    }
  }
  return ds;
}

std::vector<std::vector<ClassId>> assign_classes(const StreamConfig &config) {
  config.validate();
  Rng rng(derive_seed(config.seed, kTagSchedule));
  const auto n_learn = static_cast<std::size_t>(config.n_learnable);
  const auto per_exp = static_cast<std::size_t>(config.classes_per_exp);

  std::vector<std::vector<ClassId>> schedule(static_cast<std::size_t>(config.n_experiences));
  std::vector<ClassId> pool(n_learn);
  std::iota(pool.begin(), pool.end(), ClassId{0});
  for (auto &exp : schedule) {
    // Partial Fisher-Yates: the first per_exp entries are a uniform draw
    // without replacement.
    for (std::size_t i = 0; i < per_exp; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(n_learn - i));
      std::swap(pool[i], pool[j]);
    }
    exp.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_exp));
  }

  std::vector<int> counts(n_learn, 0);
  for (const auto &exp : schedule)
    for (ClassId c : exp)
      ++counts[c];

  // Coverage fix-up: each uncovered class replaces a repeated class in the
  // earliest experience that has one.
  std::size_t cursor = 0;
  for (ClassId u = 0; u < n_learn; ++u) {
    if (counts[u] > 0)
      continue;
    bool placed = false;
    for (std::size_t probe = 0; probe < schedule.size() && !placed; ++probe) {
      auto &exp = schedule[(cursor + probe) % schedule.size()];
      std::size_t best = exp.size();
      for (std::size_t k = 0; k < exp.size(); ++k) {
        if (counts[exp[k]] < 2)
          continue;
        if (best == exp.size() || counts[exp[k]] > counts[exp[best]] ||
            (counts[exp[k]] == counts[exp[best]] && exp[k] < exp[best]))
          best = k;
      }
      if (best == exp.size())
        continue;
      --counts[exp[best]];
      exp[best] = u;
      counts[u] = 1;
      cursor = (cursor + probe + 1) % schedule.size();
      placed = true;
    }
    if (!placed)
      throw GenerationError("cannot place class " + std::to_string(u) +
                            " without uncovering another class");
  }
  for (auto &exp : schedule)
    std::sort(exp.begin(), exp.end());
  return schedule;
}

std::vector<ClassId> permitted_unlabeled_classes(const std::vector<std::vector<ClassId>> &schedule,
                                                 const StreamConfig &config, int t) {
  const auto ti = static_cast<std::size_t>(t);
  if (config.scenario == ScenarioKind::S1)
    return schedule.at(ti);

  std::set<ClassId> allowed;
  // Current and past first appearances.
  for (std::size_t e = 0; e <= ti && e < schedule.size(); ++e)
    allowed.insert(schedule[e].begin(), schedule[e].end());
  // Anything the labeled stream will show later.
  for (std::size_t e = ti + 1; e < schedule.size(); ++e)
    allowed.insert(schedule[e].begin(), schedule[e].end());
  if (config.scenario == ScenarioKind::S3)
    for (int d = 0; d < config.n_distractor; ++d)
      allowed.insert(static_cast<ClassId>(config.n_learnable + d));
  return {allowed.begin(), allowed.end()};
}

std::vector<Experience> build_stream(const Dataset &dataset, const StreamConfig &config) {
  config.validate();
  if (dataset.n_classes() != static_cast<std::size_t>(config.n_classes()))
    throw ConfigError("dataset has " + std::to_string(dataset.n_classes()) +
                      " classes, config expects " + std::to_string(config.n_classes()));
  if (dataset.d_in != config.d_in)
    throw ConfigError("dataset dimension " + std::to_string(dataset.d_in) +
                      " differs from config d_in " + std::to_string(config.d_in));

  const auto schedule = assign_classes(config);
  Rng rng(derive_seed(config.seed, kTagAllocation));
  std::vector<std::size_t> cursor(dataset.n_classes(), 0);

  auto take = [&](ClassId c, int count, bool keep_label, std::vector<Sample> &out) {
    const auto &pool = dataset.train[c];
    if (cursor[c] + static_cast<std::size_t>(count) > pool.size())
      throw GenerationError("class " + std::to_string(c) + " exhausted: pool holds " +
                            std::to_string(pool.size()) + " training samples");
    for (int i = 0; i < count; ++i) {
      Sample s = pool[cursor[c]++];
      if (keep_label)
        s.label = s.true_label;
      else
        s.label.reset();
      out.push_back(std::move(s));
    }
  };

  std::vector<Experience> stream;
  stream.reserve(schedule.size());
  for (std::size_t t = 0; t < schedule.size(); ++t) {
    Experience exp;
    exp.index = static_cast<int>(t);
    exp.present_classes = schedule[t];

    const auto lab_counts = balanced_counts(config.labeled_per_exp, schedule[t].size(), rng);
    for (std::size_t k = 0; k < schedule[t].size(); ++k)
      take(schedule[t][k], lab_counts[k], true, exp.labeled);

    const auto permitted = permitted_unlabeled_classes(schedule, config, static_cast<int>(t));
    const auto unl_counts = balanced_counts(config.unlabeled_per_exp, permitted.size(), rng);
    for (std::size_t k = 0; k < permitted.size(); ++k)
      take(permitted[k], unl_counts[k], false, exp.unlabeled);

    rng.shuffle(std::span<Sample>(exp.labeled));
    rng.shuffle(std::span<Sample>(exp.unlabeled));
    stream.push_back(std::move(exp));
  }
  return stream;
}

TestSet build_test_set(const Dataset &dataset, const StreamConfig &config) {
  if (dataset.test.size() < static_cast<std::size_t>(config.n_learnable))
    throw GenerationError("dataset test partition covers fewer classes than n_learnable");
  std::size_t per_class = SIZE_MAX;
  for (int c = 0; c < config.n_learnable; ++c)
    per_class = std::min(per_class, dataset.test[static_cast<std::size_t>(c)].size());
  if (per_class == 0)
    throw GenerationError("dataset test partition is empty for at least one learnable class");

  TestSet ts;
  for (int c = 0; c < config.n_learnable; ++c) {
    const auto &pool = dataset.test[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < per_class; ++i) {
      Sample s = pool[i];
      s.label = s.true_label;
      ts.samples.push_back(std::move(s));
    }
    ts.classes.push_back(static_cast<ClassId>(c));
  }
  return ts;
}

StreamStats stream_statistics(const std::vector<Experience> &stream, const StreamConfig &config) {
  StreamStats st;
  st.labeled_histogram.resize(stream.size());
  st.unlabeled_histogram.resize(stream.size());
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const auto &exp = stream[t];
    std::set<ClassId> seen_here;
    for (const auto &s : exp.labeled) {
      ++st.labeled_histogram[t][s.true_label];
      seen_here.insert(s.true_label);
    }
    for (ClassId c : seen_here) {
      st.first_appearance.try_emplace(c, static_cast<int>(t));
      ++st.repetitions[c];
    }
    for (const auto &s : exp.unlabeled) {
      ++st.unlabeled_histogram[t][s.true_label];
      if (!config.is_learnable(s.true_label))
        ++st.distractor_unlabeled;
    }
    st.total_labeled += exp.labeled.size();
    st.total_unlabeled += exp.unlabeled.size();
  }
  return st;
}

std::vector<std::string> validate_stream(const std::vector<Experience> &stream,
                                         const TestSet &test, const StreamConfig &config) {
  std::vector<std::string> problems;
  auto report = [&](std::string msg) { problems.push_back(std::move(msg)); };

  if (stream.size() != static_cast<std::size_t>(config.n_experiences))
    report("stream has " + std::to_string(stream.size()) + " experiences, expected " +
           std::to_string(config.n_experiences));

  std::vector<std::vector<ClassId>> schedule;
  for (const auto &exp : stream)
    schedule.push_back(exp.present_classes);

  std::unordered_set<SampleId> labeled_ids;
  std::unordered_set<SampleId> train_ids;
  std::set<ClassId> covered;
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const auto &exp = stream[t];
    const std::string where = "experience " + std::to_string(t) + ": ";
    if (exp.labeled.size() != static_cast<std::size_t>(config.labeled_per_exp))
      report(where + "labeled size " + std::to_string(exp.labeled.size()));
    if (exp.unlabeled.size() != static_cast<std::size_t>(config.unlabeled_per_exp))
      report(where + "unlabeled size " + std::to_string(exp.unlabeled.size()));

    std::map<ClassId, int> counts;
    for (const auto &s : exp.labeled) {
      if (!s.label || *s.label != s.true_label)
        report(where + "labeled sample " + std::to_string(s.id) + " has a wrong or missing label");
      if (!config.is_learnable(s.true_label))
        report(where + "labeled sample from non-learnable class " + std::to_string(s.true_label));
      ++counts[s.true_label];
      if (!labeled_ids.insert(s.id).second)
        report(where + "labeled sample " + std::to_string(s.id) + " reused");
      train_ids.insert(s.id);
    }
    std::vector<ClassId> present;
    for (const auto &[c, n] : counts)
      present.push_back(c);
    if (present != exp.present_classes)
      report(where + "present_classes does not match the labeled samples");
    covered.insert(present.begin(), present.end());
    if (!counts.empty()) {
      auto [lo, hi] = std::minmax_element(counts.begin(), counts.end(),
                                          [](auto &a, auto &b) { return a.second < b.second; });
      if (hi->second - lo->second > 1)
        report(where + "labeled classes unbalanced");
    }

    const auto permitted = permitted_unlabeled_classes(schedule, config, static_cast<int>(t));
    const std::set<ClassId> allowed(permitted.begin(), permitted.end());
    for (const auto &s : exp.unlabeled) {
      if (s.label)
        report(where + "unlabeled sample " + std::to_string(s.id) + " exposes a label");
      if (!allowed.count(s.true_label))
        report(where + "unlabeled class " + std::to_string(s.true_label) + " not permitted in " +
               std::string(to_string(config.scenario)));
      train_ids.insert(s.id);
    }
  }
  if (covered.size() != static_cast<std::size_t>(config.n_learnable))
    report("only " + std::to_string(covered.size()) + " of " + std::to_string(config.n_learnable) +
           " learnable classes appear in the labeled stream");

  std::map<ClassId, int> test_counts;
  for (const auto &s : test.samples) {
    if (!config.is_learnable(s.true_label))
      report("test set contains non-learnable class " + std::to_string(s.true_label));
    if (train_ids.count(s.id))
      report("test sample " + std::to_string(s.id) + " also appears in training");
    ++test_counts[s.true_label];
  }
  if (!test_counts.empty()) {
    auto [lo, hi] = std::minmax_element(test_counts.begin(), test_counts.end(),
                                        [](auto &a, auto &b) { return a.second < b.second; });
    if (lo->second != hi->second)
      report("test set is not balanced");
  }
  return problems;
}

void write_manifest(std::ostream &out, const std::vector<Experience> &stream, const TestSet &test,
                    const StreamConfig &config) {
  out << kManifestFormat << "\tv" << kManifestVersion << "\tseed=" << config.seed
      << "\tscenario=" << to_string(config.scenario) << "\tn_experiences=" << stream.size()
      << '\n';
  auto record = [&out](const std::string &exp, std::string_view split, const Sample &s) {
    out << exp << '\t' << split << '\t' << s.id << '\t' << s.true_label << '\t';
    if (s.label)
      out << *s.label;
    else
      out << '-';
    out << '\n';
  };
  for (const auto &exp : stream) {
    const auto idx = std::to_string(exp.index);
    for (const auto &s : exp.labeled)
      record(idx, "labeled", s);
    for (const auto &s : exp.unlabeled)
      record(idx, "unlabeled", s);
  }
  for (const auto &s : test.samples)
    record("-", "test", s);
}

namespace {

template <typename T> T parse_number(std::string_view text, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw FormatError("manifest line " + std::to_string(line) + ": bad number '" +
                      std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    parts.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return parts;
}

} // namespace

StreamManifest read_manifest(std::istream &in) {
  StreamManifest m;
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("manifest is empty");
  const auto header = split_tabs(line);
  if (header.size() < 5 || header[0] != kManifestFormat)
    throw FormatError("not a cirlab stream manifest");
  if (header[1] != "v" + std::to_string(kManifestVersion))
    throw FormatError("unsupported manifest version '" + std::string(header[1]) + "'");
  for (std::size_t i = 2; i < header.size(); ++i) {
    const auto kv = header[i];
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos)
      throw FormatError("malformed manifest header field '" + std::string(kv) + "'");
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    if (key == "seed")
      m.seed = parse_number<std::uint64_t>(value, 1);
    else if (key == "scenario")
      m.scenario = parse_scenario(value);
    else if (key == "n_experiences")
      m.n_experiences = parse_number<int>(value, 1);
  }

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    const auto f = split_tabs(line);
    if (f.size() != 5)
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 5 fields");
    ManifestRecord r;
    r.experience = f[0] == "-" ? -1 : parse_number<int>(f[0], lineno);
    r.split = std::string(f[1]);
    if (r.split != "labeled" && r.split != "unlabeled" && r.split != "test")
      throw FormatError("manifest line " + std::to_string(lineno) + ": unknown split '" +
                        r.split + "'");
    r.sample_id = parse_number<SampleId>(f[2], lineno);
    r.true_label = parse_number<ClassId>(f[3], lineno);
    if (f[4] != "-")
      r.exposed_label = parse_number<ClassId>(f[4], lineno);
    m.records.push_back(std::move(r));
  }
  return m;
}

std::pair<std::vector<Experience>, TestSet> materialize(const StreamManifest &manifest,
                                                        const Dataset &dataset) {
  std::unordered_map<SampleId, const Sample *> index;
  for (const auto *part : {&dataset.train, &dataset.test})
    for (const auto &pool : *part)
      for (const auto &s : pool)
        index.emplace(s.id, &s);

  std::vector<Experience> stream(static_cast<std::size_t>(manifest.n_experiences));
  for (std::size_t t = 0; t < stream.size(); ++t)
    stream[t].index = static_cast<int>(t);
  TestSet test;
  std::set<ClassId> test_classes;

  for (const auto &r : manifest.records) {
    const auto it = index.find(r.sample_id);
    if (it == index.end())
      throw FormatError("manifest references sample " + std::to_string(r.sample_id) +
                        " absent from the dataset");
    if (it->second->true_label != r.true_label)
      throw FormatError("manifest sample " + std::to_string(r.sample_id) +
                        " disagrees with the dataset on its class");
    Sample s = *it->second;
    s.label = r.exposed_label;
    if (r.split == "test") {
      test_classes.insert(s.true_label);
      test.samples.push_back(std::move(s));
      continue;
    }
    if (r.experience < 0 || r.experience >= manifest.n_experiences)
      throw FormatError("manifest record has experience index out of range");
    auto &exp = stream[static_cast<std::size_t>(r.experience)];
    (r.split == "labeled" ? exp.labeled : exp.unlabeled).push_back(std::move(s));
  }
  for (auto &exp : stream) {
    std::set<ClassId> present;
    for (const auto &s : exp.labeled)
      present.insert(s.true_label);
    exp.present_classes.assign(present.begin(), present.end());
  }
  test.classes.assign(test_classes.begin(), test_classes.end());
  return {std::move(stream), std::move(test)};
}

} // namespace cirl
