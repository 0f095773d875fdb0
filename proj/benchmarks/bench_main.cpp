#include <benchmark/benchmark.h>

#include "cirlab/prototypes.hpp"
#include "cirlab/trainer.hpp"
#include "test_util.hpp"

using namespace cirl;
using cirl::testing::random_matrix;

namespace {

std::vector<ClassId> labels_upto(std::size_t n) {
  std::vector<ClassId> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<ClassId>(i);
  return v;
}

// Labeled batch 32, unlabeled batch 256, desk-sized network.
StepBatch make_batch(Rng &rng, const ModelState &old, std::size_t classes) {
  StepBatch b;
  b.x_l = random_matrix(rng, 32, 32);
  b.x_u = random_matrix(rng, 256, 32);
  b.y_l.resize(32);
  for (auto &y : b.y_l)
    y = rng.below(classes);
  b.pseudo_u.resize(256);
  for (std::size_t i = 0; i < 256; i += 2)
    b.pseudo_u[i] = rng.below(classes);
  b.has_old = true;
  const auto ol = forward(old, b.x_l), ou = forward(old, b.x_u);
  b.old_logits_l = ol.logits;
  b.old_features_l = ol.features;
  b.old_logits_u = ou.logits;
  b.old_features_u = ou.features;
  return b;
}

} // namespace

static void BM_ForwardBackward(benchmark::State &st) {
  Rng rng(1);
  const auto old = init_model(Architecture{32, {64, 64}}, labels_upto(9), rng);
  const auto cur = expand_head(old, std::vector<ClassId>{9, 10, 11}, rng);
  const auto b = make_batch(rng, old, 12);
  const LossWeights w;
  for (auto _ : st)
    benchmark::DoNotOptimize(objective(cur, b, w));
}
BENCHMARK(BM_ForwardBackward);

static void BM_AssignPseudoLabels(benchmark::State &st) {
  Rng rng(2);
  PrototypeBuffer buf;
  buf.dim = 64;
  for (ClassId c = 0; c < static_cast<ClassId>(st.range(0)); ++c) {
    std::vector<double> v(64);
    for (double &x : v)
      x = rng.normal();
    buf.entries[c] = {v, true};
  }
  const Matrix f = random_matrix(rng, 256, 64);
  for (auto _ : st)
    benchmark::DoNotOptimize(assign_pseudo_labels(buf, f, 0.5));
  st.SetItemsProcessed(st.iterations() * 256);
}
BENCHMARK(BM_AssignPseudoLabels)->Arg(10)->Arg(100);

static void BM_TrainExperience(benchmark::State &st) {
  StreamConfig s;
  s.n_experiences = 10;
  s.n_learnable = 10;
  s.n_distractor = 3;
  s.classes_per_exp = 3;
  s.labeled_per_exp = 60;
  s.unlabeled_per_exp = 120;
  s.scenario = ScenarioKind::S3;
  s.seed = 1;
  s.d_in = 32;
  const auto ds = generate_synthetic_dataset(s, 1);
  const auto stream = build_stream(ds, s);
  TrainConfig cfg;
  cfg.seed = 1;
  auto warm = init_trainer(cfg, s.d_in, s.n_learnable);
  train_experience(warm, stream[0], cfg);
  for (auto _ : st) {
    auto state = warm;
    benchmark::DoNotOptimize(train_experience(state, stream[1], cfg));
  }
}
BENCHMARK(BM_TrainExperience)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
