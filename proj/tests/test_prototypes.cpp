#include <gtest/gtest.h>

#include <cmath>

#include "cirlab/errors.hpp"
#include "cirlab/prototypes.hpp"
#include "test_util.hpp"

using namespace cirl;
using cirl::testing::random_matrix;

namespace {

PrototypeBuffer buffer_of(std::map<ClassId, std::vector<double>> m, std::size_t dim) {
  PrototypeBuffer b;
  b.dim = dim;
  for (auto &[c, v] : m)
    b.entries[c] = {v, true};
  return b;
}

// Double loop over samples and prototypes, written without the library.
std::vector<std::optional<ClassId>> brute_force(const PrototypeBuffer &b, const Matrix &f,
                                                double tau) {
  std::vector<std::optional<ClassId>> out(f.rows());
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double best = -2.0;
    ClassId arg = 0;
    for (const auto &[c, e] : b.entries) {
      double d = 0, na = 0, nb = 0;
      for (std::size_t j = 0; j < f.cols(); ++j) {
        d += f(r, j) * e.vector[j];
        na += f(r, j) * f(r, j);
        nb += e.vector[j] * e.vector[j];
      }
      const double sim = (na == 0 || nb == 0) ? 0.0 : d / (std::sqrt(na) * std::sqrt(nb));
      if (sim > best) {
        best = sim;
        arg = c;
      }
    }
    if (!b.entries.empty() && best > tau)
      out[r] = arg;
  }
  return out;
}

} // namespace

TEST(ClassPrototypes, HandExamples) {
  Matrix one(1, 3);
  one(0, 0) = 0.5;
  one(0, 1) = -1.0;
  one(0, 2) = 2.0;
  const ClassId l3[] = {3};
  const auto p = compute_class_prototypes(one, l3);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.at(3), (std::vector<double>{0.5, -1.0, 2.0}));

  Matrix two(2, 2);
  two(0, 0) = 1.0;
  two(1, 1) = 1.0;
  const ClassId l0[] = {0, 0};
  EXPECT_EQ(compute_class_prototypes(two, l0).at(0), (std::vector<double>{0.5, 0.5}));

  EXPECT_TRUE(compute_class_prototypes(Matrix(0, 4), std::span<const ClassId>{}).empty());
  EXPECT_THROW(compute_class_prototypes(two, l3), ShapeError);
}

TEST(ClassPrototypes, MatchesGroupByMean) {
  Rng rng(1);
  const Matrix f = random_matrix(rng, 40, 6);
  std::vector<ClassId> labels(40);
  for (auto &l : labels)
    l = static_cast<ClassId>(rng.below(4) * 3);
  const auto p = compute_class_prototypes(f, labels);
  for (ClassId c : {0u, 3u, 6u, 9u}) {
    std::vector<double> sum(6, 0.0);
    int n = 0;
    for (std::size_t r = 0; r < 40; ++r)
      if (labels[r] == c) {
        for (std::size_t j = 0; j < 6; ++j)
          sum[j] += f(r, j);
        ++n;
      }
    if (n == 0)
      continue;
    for (std::size_t j = 0; j < 6; ++j)
      EXPECT_NEAR(p.at(c)[j], sum[j] / n, 1e-12);
  }
}

TEST(UpdateBuffer, CaseTable) {
  PrototypeBuffer empty;
  empty.dim = 2;
  auto b = update_buffer(empty, {{1, {3.0, 4.0}}});
  EXPECT_EQ(b.entries.at(1).vector, (std::vector<double>{3.0, 4.0}));

  b = update_buffer(buffer_of({{1, {2, 2}}}, 2), {{1, {0, 0}}});
  EXPECT_EQ(b.entries.at(1).vector, (std::vector<double>{1, 1}));

  const std::vector<double> a{1, 5}, bb{2, 4}, c{6, 0}, d{-1, -1};
  b = update_buffer(buffer_of({{1, a}, {2, bb}}, 2), {{2, c}, {3, d}});
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b.entries.at(1).vector, a);
  EXPECT_EQ(b.entries.at(2).vector, (std::vector<double>{4, 2}));
  EXPECT_EQ(b.entries.at(3).vector, d);
}

TEST(UpdateBuffer, CapacityAndShape) {
  auto b = buffer_of({{1, {0, 0}}, {2, {1, 1}}}, 2);
  b.capacity = 2;
  EXPECT_THROW(update_buffer(b, {{3, {1, 1}}}), BufferError);
  EXPECT_NO_THROW(update_buffer(b, {{2, {5, 5}}}));
  EXPECT_THROW(update_buffer(b, {{2, {5, 5, 5}}}), ShapeError);
}

TEST(UpdateBuffer, DisjointUpdatesCommute) {
  const auto base = buffer_of({{1, {1, 2, 3}}}, 3);
  const PrototypeMap f1{{2, {0, 1, 0}}, {4, {9, 9, 9}}};
  const PrototypeMap f2{{3, {1, 1, 1}}, {5, {-2, 0, 2}}};
  EXPECT_EQ(update_buffer(update_buffer(base, f1), f2), update_buffer(update_buffer(base, f2), f1));
}

TEST(Cosine, ZeroNormIsZero) {
  const std::vector<double> z{0, 0}, v{1, 2};
  EXPECT_EQ(cosine_similarity(z, v), 0.0);
  EXPECT_EQ(cosine_similarity(v, z), 0.0);
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
}

TEST(PseudoLabels, HandExamples) {
  const auto b = buffer_of({{4, {1, 0, 0}}, {7, {0, 1, 0}}}, 3);
  Matrix f(3, 3);
  f(0, 1) = 1.0; // equals prototype 7
  f(1, 2) = 1.0; // orthogonal to both
  // row 2 stays zero
  const auto got = assign_pseudo_labels(b, f, 0.5);
  EXPECT_EQ(got[0], std::optional<ClassId>(7));
  EXPECT_FALSE(got[1].has_value());
  EXPECT_FALSE(got[2].has_value());

  PrototypeBuffer none;
  none.dim = 3;
  for (const auto &g : assign_pseudo_labels(none, f, 0.5))
    EXPECT_FALSE(g.has_value());
  EXPECT_THROW(assign_pseudo_labels(b, Matrix(1, 2), 0.5), ShapeError);
}

TEST(PseudoLabels, ThresholdIsStrictAndTiesGoLow) {
  const auto b = buffer_of({{9, {1, 1}}, {2, {1, 1}}}, 2);
  Matrix f(1, 2);
  f(0, 0) = 3.0;
  f(0, 1) = 3.0;
  EXPECT_EQ(assign_pseudo_labels(b, f, 0.5)[0], std::optional<ClassId>(2));
  // similarity is exactly 1 here, so tau = 1 must reject
  const auto unit = buffer_of({{1, {1, 0}}}, 2);
  Matrix g(1, 2);
  g(0, 0) = 2.0;
  EXPECT_FALSE(assign_pseudo_labels(unit, g, 1.0)[0].has_value());
  EXPECT_TRUE(assign_pseudo_labels(unit, g, 0.999)[0].has_value());
}

TEST(PseudoLabels, MatchesBruteForce) {
  Rng rng(3);
  PrototypeBuffer b;
  b.dim = 8;
  for (ClassId c = 0; c < 10; ++c) {
    std::vector<double> v(8);
    for (double &x : v)
      x = rng.normal();
    b.entries[c * 2] = {v, true};
  }
  const Matrix f = random_matrix(rng, 100, 8);
  for (double tau : {-1.0, 0.0, 0.2, 0.5, 0.8})
    EXPECT_EQ(assign_pseudo_labels(b, f, tau), brute_force(b, f, tau));
}

TEST(PseudoLabels, ScaleInvarianceAndTauMonotonicity) {
  Rng rng(4);
  PrototypeBuffer b;
  b.dim = 5;
  for (ClassId c = 0; c < 6; ++c) {
    std::vector<double> v(5);
    for (double &x : v)
      x = std::abs(rng.normal());
    b.entries[c] = {v, true};
  }
  const Matrix f = random_matrix(rng, 200, 5);
  const auto base = assign_pseudo_labels(b, f, 0.5);
  for (double s : {0.001, 3.0, 1e4}) {
    Matrix g = f;
    for (double &x : g.flat())
      x *= s;
    EXPECT_EQ(assign_pseudo_labels(b, g, 0.5), base);
  }
  // assigned set at a higher tau is a subset of the one at a lower tau
  const double taus[] = {-1.0, 0.0, 0.3, 0.5, 0.7, 0.9, 1.0};
  for (std::size_t k = 1; k < std::size(taus); ++k) {
    const auto lo = assign_pseudo_labels(b, f, taus[k - 1]);
    const auto hi = assign_pseudo_labels(b, f, taus[k]);
    for (std::size_t i = 0; i < hi.size(); ++i)
      if (hi[i])
        EXPECT_EQ(lo[i], hi[i]);
  }
}
