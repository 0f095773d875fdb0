#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cirlab/checkpoint.hpp"
#include "cirlab/errors.hpp"
#include "cirlab/model.hpp"
#include "cirlab/trainer.hpp"
#include "test_util.hpp"

using namespace cirl;
using cirl::testing::bitwise_equal;
using cirl::testing::random_matrix;

namespace {

std::vector<ClassId> labels(std::size_t n) {
  std::vector<ClassId> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<ClassId>(i);
  return v;
}

ModelState random_model(std::uint64_t seed, std::size_t d_in, std::vector<std::size_t> hidden,
                        std::size_t n_classes) {
  Rng rng(seed);
  const auto l = labels(n_classes);
  return init_model(Architecture{d_in, std::move(hidden)}, l, rng);
}

// Plain triple loop: relu(W x + b) per hidden layer, then the linear head.
std::vector<double> oracle_dense(const Dense &layer, const std::vector<double> &x, bool relu) {
  std::vector<double> y(layer.out());
  for (std::size_t o = 0; o < layer.out(); ++o) {
    double s = layer.bias[o];
    for (std::size_t i = 0; i < layer.in(); ++i)
      s += layer.weight(o, i) * x[i];
    y[o] = relu ? std::max(0.0, s) : s;
  }
  return y;
}

} // namespace

TEST(Forward, ZeroExtractorGivesZeroFeatures) {
  auto m = random_model(1, 3, {4}, 2);
  for (double &w : m.params.extractor[0].weight.flat())
    w = 0.0;
  const auto h = forward_features(m, std::vector<double>{0.3, -2.0, 5.0});
  EXPECT_EQ(h, std::vector<double>(4, 0.0));
}

TEST(Forward, IdentityExtractorPassesNonNegativeInput) {
  auto m = random_model(1, 3, {3}, 2);
  auto &w = m.params.extractor[0].weight;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      w(r, c) = r == c ? 1.0 : 0.0;
  const std::vector<double> x{0.5, 0.0, 7.25};
  EXPECT_EQ(forward_features(m, x), x);
}

TEST(Forward, MatchesDenseOracle) {
  const auto m = random_model(42, 6, {5, 4}, 3);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(6);
    for (double &v : x)
      v = rng.normal();
    auto h = oracle_dense(m.params.extractor[0], x, true);
    h = oracle_dense(m.params.extractor[1], h, true);
    const auto z = oracle_dense(m.params.head, h, false);

    const auto h2 = forward_features(m, x);
    const auto z2 = forward_logits(m, h2);
    for (std::size_t i = 0; i < h.size(); ++i)
      EXPECT_NEAR(h2[i], h[i], 1e-12);
    for (std::size_t i = 0; i < z.size(); ++i)
      EXPECT_NEAR(z2[i], z[i], 1e-12);
  }
}

TEST(Forward, BatchedAgreesWithSingleSample) {
  const auto m = random_model(3, 5, {8, 6}, 4);
  Rng rng(4);
  const Matrix x = random_matrix(rng, 7, 5);
  const auto pass = forward(m, x);
  for (std::size_t r = 0; r < 7; ++r) {
    const std::vector<double> xr(x.row(r).begin(), x.row(r).end());
    const auto h = forward_features(m, xr);
    const auto z = forward_logits(m, h);
    for (std::size_t j = 0; j < h.size(); ++j)
      EXPECT_NEAR(pass.features(r, j), h[j], 1e-12);
    for (std::size_t j = 0; j < z.size(); ++j)
      EXPECT_NEAR(pass.logits(r, j), z[j], 1e-12);
  }
}

TEST(Forward, HeadSpecialCases) {
  auto m = random_model(5, 4, {3}, 3);
  const std::vector<double> h{0.2, 1.5, -0.7};
  for (double &w : m.params.head.weight.flat())
    w = 0.0;
  EXPECT_EQ(forward_logits(m, h), std::vector<double>(3, 0.0));
  // one-hot rows pick feature coordinates 2, 0, 1
  m.params.head.weight(0, 2) = 1.0;
  m.params.head.weight(1, 0) = 1.0;
  m.params.head.weight(2, 1) = 1.0;
  EXPECT_EQ(forward_logits(m, h), (std::vector<double>{-0.7, 0.2, 1.5}));
}

TEST(Forward, DimensionMismatchThrows) {
  const auto m = random_model(5, 4, {3}, 3);
  EXPECT_THROW(forward_features(m, std::vector<double>(5, 0.0)), ShapeError);
  EXPECT_THROW(forward_logits(m, std::vector<double>(4, 0.0)), ShapeError);
  EXPECT_THROW(forward(m, Matrix(2, 3)), ShapeError);
}

TEST(Init, GlorotBoundsAndZeroBias) {
  const auto m = random_model(8, 10, {20}, 5);
  const double a0 = std::sqrt(6.0 / 30.0), a1 = std::sqrt(6.0 / 25.0);
  for (double w : m.params.extractor[0].weight.flat())
    EXPECT_LE(std::abs(w), a0);
  for (double w : m.params.head.weight.flat())
    EXPECT_LE(std::abs(w), a1);
  for (double b : m.params.extractor[0].bias)
    EXPECT_EQ(b, 0.0);
  EXPECT_EQ(m.params.head.weight.rows(), 5u);
  EXPECT_EQ(m.params.head.weight.cols(), 20u);
}

TEST(ExpandHead, NoNewClassesIsANoOp) {
  const auto m = random_model(2, 4, {6}, 5);
  Rng rng(1);
  EXPECT_EQ(expand_head(m, std::vector<ClassId>{}, rng), m);
}

TEST(ExpandHead, OldLogitsSurviveExactly) {
  const auto m = random_model(2, 4, {6}, 5);
  Rng rng(1);
  const std::vector<ClassId> fresh{10, 11, 12};
  const auto e = expand_head(m, fresh, rng);
  EXPECT_EQ(e.n_classes(), 8u);
  EXPECT_EQ(e.params.extractor, m.params.extractor);
  EXPECT_EQ(e.column_of(11), 6u);
  EXPECT_EQ(e.column_of(99), e.n_classes());
  Rng xr(5);
  const Matrix x = random_matrix(xr, 50, 4, 3.0);
  const Matrix a = logits_for(m, x), b = logits_for(e, x);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(a(r, c)), std::bit_cast<std::uint64_t>(b(r, c)));
}

TEST(ExpandHead, SmallNewColumnsKeepOldArgmax) {
  const auto m = random_model(12, 4, {6}, 5);
  Rng rng(2);
  const auto e = expand_head(m, std::vector<ClassId>{5, 6}, rng, 1e-6);
  Rng xr(6);
  const Matrix x = random_matrix(xr, 200, 4);
  const Matrix a = logits_for(m, x), b = logits_for(e, x);
  int checked = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::size_t am = 0, bm = 0;
    for (std::size_t c = 1; c < 5; ++c)
      if (a(r, c) > a(r, am))
        am = c;
    for (std::size_t c = 1; c < 7; ++c)
      if (b(r, c) > b(r, bm))
        bm = c;
    if (std::max(b(r, 5), b(r, 6)) < a(r, am)) {
      EXPECT_EQ(am, bm);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Snapshot, IsolatedFromLiveModel) {
  auto m = random_model(7, 4, {6, 5}, 3);
  const auto snap = snapshot(m);
  Rng xr(8);
  const Matrix x = random_matrix(xr, 100, 4);
  const Matrix before = logits_for(m, x);
  EXPECT_TRUE(bitwise_equal(logits_for(snap.state(), x).flat(), before.flat()));

  for (auto t : m.params.tensors())
    for (double &v : t)
      v = 0.0;
  EXPECT_TRUE(bitwise_equal(logits_for(snap.state(), x).flat(), before.flat()));
  EXPECT_EQ(snapshot(snap.state()).state(), snap.state());
}

TEST(Gradients, ConstantLossGivesZeroGradients) {
  const auto m = random_model(3, 4, {5}, 3);
  Rng xr(1);
  const Matrix inputs[] = {random_matrix(xr, 4, 4)};
  const auto g = compute_gradients(m, inputs, [](auto, auto) { return 3.5; });
  EXPECT_EQ(g.loss, 3.5);
  for (auto t : std::as_const(g.grads).tensors())
    for (double v : t)
      EXPECT_EQ(v, 0.0);
}

TEST(Gradients, SumOfHeadBiasGivesOnes) {
  // With a zero input and zero hidden biases the features are 0, so the
  // logits equal the head bias.
  const auto m = random_model(3, 4, {5}, 3);
  const Matrix inputs[] = {Matrix(1, 4, 0.0)};
  const auto g = compute_gradients(m, inputs, [](std::span<const ForwardPass> p,
                                                 std::span<OutputGrads> og) {
    double s = 0;
    for (double v : p[0].logits.flat())
      s += v;
    og[0].d_logits = Matrix(p[0].logits.rows(), p[0].logits.cols(), 1.0);
    return s;
  });
  EXPECT_EQ(g.grads.head.bias, std::vector<double>(3, 1.0));
  for (double v : g.grads.head.weight.flat())
    EXPECT_EQ(v, 0.0);
  for (const auto &layer : g.grads.extractor) {
    for (double v : layer.weight.flat())
      EXPECT_EQ(v, 0.0);
    for (double v : layer.bias)
      EXPECT_EQ(v, 0.0);
  }
}

TEST(Gradients, NonFiniteLossThrows) {
  const auto m = random_model(3, 4, {5}, 3);
  const Matrix inputs[] = {Matrix(1, 4, 1.0)};
  EXPECT_THROW(compute_gradients(m, inputs, [](auto, auto) { return std::nan(""); }),
               NumericalError);
}

TEST(Gradients, TotalObjectiveMatchesFiniteDifferences) {
  auto m = random_model(21, 5, {6, 4}, 3);
  Rng rng(22);
  auto old = m;
  for (auto t : old.params.tensors())
    for (double &v : t)
      v += 0.05 * rng.normal();
  // The current head is one class wider than the old one.
  m = expand_head(m, std::vector<ClassId>{3}, rng);

  StepBatch b;
  b.x_l = random_matrix(rng, 4, 5);
  b.y_l = {0, 3, 1, 2};
  b.x_u = random_matrix(rng, 4, 5);
  b.pseudo_u = {std::nullopt, 2, 0, std::nullopt};
  b.has_old = true;
  const auto ol = forward(old, b.x_l), ou = forward(old, b.x_u);
  b.old_logits_l = ol.logits;
  b.old_features_l = ol.features;
  b.old_logits_u = ou.logits;
  b.old_features_u = ou.features;
  LossWeights w;
  w.beta = 1.0; // keeps every term on a comparable scale

  const auto res = objective(m, b, w);
  const auto analytic = std::as_const(res.grads).tensors();
  auto params = m.params.tensors();
  const double h = 1e-5;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double keep = params[t][i];
      params[t][i] = keep + h;
      const double up = objective_value(m, b, w);
      params[t][i] = keep - h;
      const double dn = objective_value(m, b, w);
      params[t][i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double a = analytic[t][i];
      EXPECT_LE(std::abs(a - fd), std::max(1e-7, 1e-4 * std::max(std::abs(a), std::abs(fd))))
          << "tensor " << t << " index " << i;
    }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto m = random_model(31, 6, {7, 5}, 4);
  Rng rng(2);
  m = expand_head(m, std::vector<ClassId>{17}, rng);
  PrototypeBuffer buf;
  buf.capacity = 10;
  buf.dim = 5;
  buf.entries[3] = {{0.1, -0.0, 1e-300, 2.5, 3.0}, true};
  buf.entries[17] = {{1, 2, 3, 4, 5}, true};

  std::stringstream ss;
  save_checkpoint(ss, m, &buf);
  const auto ck = load_checkpoint(ss);
  EXPECT_EQ(ck.model.arch, m.arch);
  EXPECT_EQ(ck.model.head_labels, m.head_labels);
  const auto a = m.params.tensors();
  const auto b = ck.model.params.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_TRUE(bitwise_equal(a[i], b[i]));
  ASSERT_TRUE(ck.buffer.has_value());
  EXPECT_EQ(*ck.buffer, buf);

  Rng xr(3);
  const Matrix x = random_matrix(xr, 10, 6);
  EXPECT_TRUE(bitwise_equal(logits_for(m, x).flat(), logits_for(ck.model, x).flat()));

  std::stringstream bare;
  save_checkpoint(bare, m);
  EXPECT_FALSE(load_checkpoint(bare).buffer.has_value());
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream ss("definitely not a checkpoint");
  EXPECT_THROW(load_checkpoint(ss), FormatError);
  std::stringstream empty;
  EXPECT_THROW(load_checkpoint(empty), FormatError);
}
