#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cirlab/errors.hpp"
#include "cirlab/eval.hpp"
#include "cirlab/optim.hpp"
#include "cirlab/trainer.hpp"
#include "test_util.hpp"

using namespace cirl;
using cirl::testing::bitwise_equal;

namespace {

Parameters bias_only(std::vector<double> values) {
  Parameters p;
  p.head.weight = Matrix(values.size(), 0);
  p.head.bias = std::move(values);
  return p;
}

struct Fixture {
  StreamConfig stream_cfg;
  TrainConfig cfg;
  std::vector<Experience> stream;
  TestSet test;
};

Fixture small(std::uint64_t seed, ScenarioKind sc = ScenarioKind::S2) {
  Fixture f;
  auto &s = f.stream_cfg;
  s.n_experiences = 4;
  s.n_learnable = 6;
  s.n_distractor = 2;
  s.classes_per_exp = 2;
  s.labeled_per_exp = 20;
  s.unlabeled_per_exp = 40;
  s.scenario = sc;
  s.seed = seed;
  s.d_in = 8;
  f.cfg.hidden = {16, 12};
  f.cfg.max_epochs = 6;
  f.cfg.batch_size_train = 8;
  f.cfg.seed = seed;
  f.cfg.lr = 5e-3;
  SyntheticConfig synth;
  synth.test_per_class = 20;
  const auto ds = generate_synthetic_dataset(s, seed, synth);
  f.stream = build_stream(ds, s);
  f.test = build_test_set(ds, s);
  return f;
}

void expect_same_params(const Parameters &a, const Parameters &b) {
  const auto ta = a.tensors(), tb = b.tensors();
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i)
    EXPECT_TRUE(bitwise_equal(ta[i], tb[i])) << "tensor " << i;
}

} // namespace

TEST(Adam, ZeroGradientOnFreshStateKeepsParameters) {
  auto p = bias_only({0.3, -1.2});
  auto opt = OptimizerState::for_params(p, 0.1);
  adam_step(opt, p, p.zeros_like(), AdamConfig{});
  EXPECT_EQ(p.head.bias, (std::vector<double>{0.3, -1.2}));
  EXPECT_EQ(opt.step, 1u);
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  auto p = bias_only({0.0});
  auto opt = OptimizerState::for_params(p, 0.1);
  opt.m.head.bias[0] = 0.5;
  opt.v.head.bias[0] = 0.2;
  adam_step(opt, p, p.zeros_like(), AdamConfig{});
  EXPECT_DOUBLE_EQ(opt.m.head.bias[0], 0.45);
  EXPECT_DOUBLE_EQ(opt.v.head.bias[0], 0.2 * 0.999);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = bias_only({2.0});
  auto opt = OptimizerState::for_params(p, 0.1);
  adam_step(opt, p, bias_only({1.0}), AdamConfig{});
  EXPECT_LT(std::abs(std::abs(p.head.bias[0] - 2.0) - 0.1), 1e-6);
}

TEST(Adam, ThreeStepsOnAQuadratic) {
  // f(p) = 1.5 (p + 2)^2, lr 0.1, default constants; trace frozen from an
  // independent script.
  auto p = bias_only({1.0, -0.5});
  auto opt = OptimizerState::for_params(p, 0.1);
  const double expected[3][2] = {{0.9000000001111111, -0.5999999997777777},
                                 {0.8001027073028681, -0.6997609379330897},
                                 {0.7003815232817219, -0.7990971298243226}};
  for (int t = 0; t < 3; ++t) {
    auto g = p.zeros_like();
    for (int i = 0; i < 2; ++i)
      g.head.bias[i] = 3.0 * (p.head.bias[i] + 2.0);
    adam_step(opt, p, g, AdamConfig{});
    EXPECT_NEAR(p.head.bias[0], expected[t][0], 1e-10);
    EXPECT_NEAR(p.head.bias[1], expected[t][1], 1e-10);
  }
}

TEST(Adam, RejectsBadGradients) {
  auto p = bias_only({1.0});
  auto opt = OptimizerState::for_params(p, 0.1);
  EXPECT_THROW(adam_step(opt, p, bias_only({NAN}), AdamConfig{}), NumericalError);
  EXPECT_THROW(adam_step(opt, p, bias_only({1.0, 2.0}), AdamConfig{}), ShapeError);
}

TEST(Scheduler, StepDecay) {
  for (int e = 0; e < 5; ++e)
    EXPECT_EQ(scheduler_lr(5e-4, e, 5, 0.5), 5e-4);
  EXPECT_EQ(scheduler_lr(5e-4, 5, 5, 0.5), 2.5e-4);
  EXPECT_EQ(scheduler_lr(5e-4, 14, 5, 0.5), 1.25e-4);
}

TEST(Trainer, LogsFollowTheSchedule) {
  auto f = small(1);
  f.cfg.early_stop_patience = 0;
  f.cfg.max_epochs = 7;
  f.cfg.scheduler_step = 3;
  const auto run = run_stream(f.stream, f.test, f.cfg, f.stream_cfg);
  for (const auto &e : run.log)
    EXPECT_EQ(e.lr, scheduler_lr(f.cfg.lr, e.epoch, 3, 0.5));
  EXPECT_EQ(run.log.size(), 4u * 7u);
}

TEST(Trainer, FirstExperienceHasNoDistillation) {
  auto f = small(2);
  f.cfg.weights.beta = 123.0;
  f.cfg.weights.alpha_l = 5.0;
  auto state = init_trainer(f.cfg, 8, 6);
  const auto res = train_experience(state, f.stream[0], f.cfg);
  ASSERT_FALSE(res.epochs.empty());
  for (const auto &e : res.epochs) {
    EXPECT_EQ(e.loss.lwf, 0.0);
    EXPECT_EQ(e.loss.lfl, 0.0);
  }
  // the second experience distils against the snapshot
  const auto res1 = train_experience(state, f.stream[1], f.cfg);
  double lfl = 0;
  for (const auto &e : res1.epochs)
    lfl += e.loss.lfl;
  EXPECT_GT(lfl, 0.0);
}

TEST(Trainer, TauAboveOneDisablesPseudoLabels) {
  auto f = small(3);
  f.cfg.tau = 1.01;
  const auto run = run_stream(f.stream, f.test, f.cfg, f.stream_cfg);
  for (const auto &e : run.log) {
    EXPECT_EQ(e.loss.pseudo, 0.0);
    EXPECT_EQ(e.pseudo_assigned, 0);
  }
}

TEST(Trainer, ZeroWeightsReduceToFineTuning) {
  for (std::uint64_t seed : {4u, 5u}) {
    auto f = small(seed);
    auto cir = f.cfg;
    cir.weights.alpha_l = cir.weights.alpha_u = cir.weights.beta = cir.weights.gamma = 0.0;
    auto ft = f.cfg;
    ft.method = Method::FineTune;
    const auto a = run_stream(f.stream, f.test, cir, f.stream_cfg);
    const auto b = run_stream(f.stream, f.test, ft, f.stream_cfg);
    expect_same_params(a.state.model.params, b.state.model.params);
    EXPECT_EQ(a.report.accuracy_matrix, b.report.accuracy_matrix);
    EXPECT_TRUE(b.state.buffer.empty());
  }
}

TEST(Trainer, PhaseOrderWithinEachExperience) {
  auto f = small(6);
  std::vector<std::pair<Phase, int>> trace;
  TrainHooks hooks{[&](Phase p, int t) { trace.emplace_back(p, t); }};
  run_stream(f.stream, f.test, f.cfg, f.stream_cfg, &hooks);
  for (int t = 0; t < 4; ++t) {
    std::vector<Phase> seq;
    for (const auto &[p, e] : trace)
      if (e == t)
        seq.push_back(p);
    auto first = [&](Phase p) { return std::find(seq.begin(), seq.end(), p) - seq.begin(); };
    auto last = [&](Phase p) {
      return seq.size() - 1 - (std::find(seq.rbegin(), seq.rend(), p) - seq.rbegin());
    };
    const auto step = first(Phase::GradientStep);
    ASSERT_LT(step, static_cast<long>(seq.size()));
    EXPECT_LT(first(Phase::BufferUpdate), step);
    EXPECT_LT(first(Phase::PseudoLabel), step);
    EXPECT_LT(first(Phase::BufferUpdate), first(Phase::PseudoLabel));
    if (first(Phase::HeadExpansion) < static_cast<long>(seq.size()))
      EXPECT_LT(first(Phase::HeadExpansion), step);
    EXPECT_EQ(seq.back(), Phase::Snapshot);
    EXPECT_GT(first(Phase::Snapshot), static_cast<long>(last(Phase::GradientStep)));
  }
}

TEST(Trainer, SeenClassesAreTheUnionOfPresentClasses) {
  auto f = small(7);
  std::set<ClassId> expected;
  auto state = init_trainer(f.cfg, 8, 6);
  for (const auto &exp : f.stream) {
    train_experience(state, exp, f.cfg);
    expected.insert(exp.present_classes.begin(), exp.present_classes.end());
    EXPECT_EQ(state.seen_classes, expected);
    EXPECT_EQ(state.model.n_classes(), expected.size());
    EXPECT_TRUE(state.old_model.has_value());
  }
}

TEST(Trainer, EarlyStoppingKeepsTheBestEpoch) {
  for (std::uint64_t seed = 10; seed < 14; ++seed) {
    auto f = small(seed);
    f.cfg.max_epochs = 15;
    f.cfg.lr = 2e-2;
    auto state = init_trainer(f.cfg, 8, 6);
    std::vector<Parameters> per_epoch;
    TrainHooks hooks{[&](Phase p, int) {
      if (p == Phase::EpochEnd)
        per_epoch.push_back(state.model.params);
    }};
    for (const auto &exp : f.stream) {
      per_epoch.clear();
      const auto res = train_experience(state, exp, f.cfg, &hooks);
      double best = -1;
      for (const auto &e : res.epochs)
        best = std::max(best, *e.val_accuracy);
      ASSERT_GE(res.best_epoch, 0);
      EXPECT_EQ(*res.epochs[res.best_epoch].val_accuracy, best);
      // first epoch reaching the best is the one kept
      for (int k = 0; k < res.best_epoch; ++k)
        EXPECT_LT(*res.epochs[k].val_accuracy, best);
      if (static_cast<int>(res.epochs.size()) < f.cfg.max_epochs)
        EXPECT_EQ(static_cast<int>(res.epochs.size()) - 1 - res.best_epoch,
                  f.cfg.early_stop_patience);
      expect_same_params(state.model.params, per_epoch[res.best_epoch]);
    }
  }
}

TEST(Trainer, RerunIsDeterministic) {
  auto f = small(8, ScenarioKind::S3);
  const auto a = run_stream(f.stream, f.test, f.cfg, f.stream_cfg);
  const auto b = run_stream(f.stream, f.test, f.cfg, f.stream_cfg);
  std::ostringstream ja, jb;
  write_metrics_json(ja, a.report);
  write_metrics_json(jb, b.report);
  EXPECT_EQ(ja.str(), jb.str());
  expect_same_params(a.state.model.params, b.state.model.params);
  EXPECT_EQ(a.state.buffer, b.state.buffer);
}

TEST(Trainer, SingleExperienceWithoutSignalIsAtChance) {
  StreamConfig s;
  s.n_experiences = 1;
  s.n_learnable = 10;
  s.n_distractor = 0;
  s.classes_per_exp = 10;
  s.labeled_per_exp = 100;
  s.unlabeled_per_exp = 50;
  s.d_in = 8;
  SyntheticConfig synth;
  synth.mean_scale = 0.0; // every class draws from the same distribution
  synth.test_per_class = 100;
  const auto ds = generate_synthetic_dataset(s, 3, synth);
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.max_epochs = 3;
  const auto run = run_stream(build_stream(ds, s), build_test_set(ds, s), cfg, s);
  ASSERT_EQ(run.report.accuracy_matrix.size(), 1u);
  ASSERT_EQ(run.report.accuracy_matrix[0].size(), 1u);
  const double se = std::sqrt(0.1 * 0.9 / 1000.0);
  EXPECT_NEAR(run.report.final_accuracy, 0.1, 3 * se);
}

TEST(Trainer, FixedHeadCoversLearnableClasses) {
  auto f = small(9);
  f.cfg.head_policy = HeadPolicy::Fixed;
  auto state = init_trainer(f.cfg, 8, 6);
  EXPECT_EQ(state.model.n_classes(), 6u);
  for (const auto &exp : f.stream)
    EXPECT_EQ(train_experience(state, exp, f.cfg).n_new_classes, 0u);
  EXPECT_EQ(state.model.n_classes(), 6u);

  auto narrow = init_trainer(f.cfg, 8, 1);
  Experience e = f.stream[0];
  if (std::all_of(e.present_classes.begin(), e.present_classes.end(),
                  [](ClassId c) { return c == 0; }))
    GTEST_SKIP();
  EXPECT_THROW(train_experience(narrow, e, f.cfg), ExperienceError);
}

TEST(Trainer, EmptyLabeledStreamIsAnError) {
  auto f = small(11);
  auto state = init_trainer(f.cfg, 8, 6);
  Experience e = f.stream[0];
  e.labeled.clear();
  EXPECT_THROW(train_experience(state, e, f.cfg), ExperienceError);
}

TEST(Trainer, OptimizerPersistsUnlessReset) {
  auto f = small(12);
  f.cfg.early_stop_patience = 0;
  auto keep = init_trainer(f.cfg, 8, 6);
  const auto r0 = train_experience(keep, f.stream[0], f.cfg);
  const auto r1 = train_experience(keep, f.stream[1], f.cfg);
  std::uint64_t steps = 0;
  for (const auto *r : {&r0, &r1})
    for (const auto &e : r->epochs)
      steps += static_cast<std::uint64_t>(e.steps);
  EXPECT_EQ(keep.optimizer.step, steps);

  f.cfg.reset_optimizer = true;
  auto reset = init_trainer(f.cfg, 8, 6);
  train_experience(reset, f.stream[0], f.cfg);
  const auto r = train_experience(reset, f.stream[1], f.cfg);
  steps = 0;
  for (const auto &e : r.epochs)
    steps += static_cast<std::uint64_t>(e.steps);
  EXPECT_EQ(reset.optimizer.step, steps);
}

TEST(Objective, BreakdownAddsUp) {
  auto f = small(13);
  auto state = init_trainer(f.cfg, 8, 6);
  train_experience(state, f.stream[0], f.cfg);
  Rng rng(1);
  StepBatch b;
  b.x_l = cirl::testing::random_matrix(rng, 5, 8);
  b.y_l = {0, 1, 0, 1, 1};
  b.x_u = cirl::testing::random_matrix(rng, 5, 8);
  b.pseudo_u = {0, std::nullopt, 1, 1, std::nullopt};
  b.has_old = true;
  const auto old = forward(state.model, b.x_l), oldu = forward(state.model, b.x_u);
  b.old_logits_l = old.logits;
  b.old_features_l = old.features;
  b.old_logits_u = oldu.logits;
  b.old_features_u = oldu.features;
  const auto r = objective(state.model, b, f.cfg.weights);
  const auto &p = r.breakdown;
  EXPECT_NEAR(p.total, p.sup + p.lwf + p.lfl + p.pseudo, 1e-12);
  // current == old, so both distillation terms vanish
  EXPECT_NEAR(p.lwf, 0.0, 1e-15);
  EXPECT_EQ(p.lfl, 0.0);
  EXPECT_GT(p.pseudo, 0.0);
  EXPECT_EQ(objective_value(state.model, b, f.cfg.weights), p.total);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.scheduler_gamma = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.max_epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
