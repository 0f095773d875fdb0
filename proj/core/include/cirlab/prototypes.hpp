#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cirlab/stream.hpp"
#include "cirlab/tensor.hpp"

namespace cirl {

using PrototypeMap = std::map<ClassId, std::vector<double>>;

struct PrototypeEntry {
  std::vector<double> vector;
  bool seen = false;

  friend bool operator==(const PrototypeEntry &, const PrototypeEntry &) = default;
};

// Capacity-bounded store of per-class mean feature vectors.
struct PrototypeBuffer {
  std::size_t capacity = 100;
  std::size_t dim = 0;
  std::map<ClassId, PrototypeEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }

  friend bool operator==(const PrototypeBuffer &, const PrototypeBuffer &) = default;
};

// Per-class mean of the feature rows. Empty input gives an empty map.
PrototypeMap compute_class_prototypes(const Matrix &features, std::span<const ClassId> labels);

// Classes in both: midpoint of stored and fresh. Classes only in fresh: stored
// as-is. Classes only in the buffer: unchanged. Throws BufferError if the
// result would exceed capacity and ShapeError on a dimension mismatch.
PrototypeBuffer update_buffer(const PrototypeBuffer &buffer, const PrototypeMap &fresh);

// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Argmax-cosine class per row, kept only when the best similarity is strictly
// greater than tau. Exact ties go to the smallest ClassId.
std::vector<std::optional<ClassId>> assign_pseudo_labels(const PrototypeBuffer &buffer,
                                                         const Matrix &features_u, double tau);

} // namespace cirl
