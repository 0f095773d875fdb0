#include "cirlab/prototypes.hpp"

#include <cmath>
#include <string>

#include "cirlab/errors.hpp"

namespace cirl {

PrototypeMap compute_class_prototypes(const Matrix &features, std::span<const ClassId> labels) {
  if (labels.size() != features.rows())
    throw ShapeError("compute_class_prototypes: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(features.rows()) + " feature rows");
  PrototypeMap sums;
  std::map<ClassId, std::size_t> counts;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto &acc = sums[labels[r]];
    if (acc.empty())
      acc.assign(features.cols(), 0.0);
    const auto row = features.row(r);
    for (std::size_t k = 0; k < row.size(); ++k)
      acc[k] += row[k];
    ++counts[labels[r]];
  }
  for (auto &[c, v] : sums) {
    const auto n = static_cast<double>(counts[c]);
    for (auto &x : v)
      x /= n;
  }
  return sums;
}

PrototypeBuffer update_buffer(const PrototypeBuffer &buffer, const PrototypeMap &fresh) {
  PrototypeBuffer out = buffer;
  for (const auto &[c, v] : fresh) {
    if (out.dim == 0 && out.entries.empty())
      out.dim = v.size();
    if (v.size() != out.dim)
      throw ShapeError("update_buffer: prototype for class " + std::to_string(c) + " has " +
                       std::to_string(v.size()) + " entries, buffer dimension is " +
                       std::to_string(out.dim));
    if (!all_finite(v))
      throw NumericalError("update_buffer: prototype for class " + std::to_string(c) +
                           " is not finite");
    auto it = out.entries.find(c);
    if (it == out.entries.end()) {
      if (out.entries.size() >= out.capacity)
        throw BufferError("prototype buffer full (" + std::to_string(out.capacity) +
                          " classes); cannot add class " + std::to_string(c));
      out.entries.emplace(c, PrototypeEntry{v, true});
      continue;
    }
    auto &stored = it->second.vector;
    for (std::size_t k = 0; k < stored.size(); ++k)
      stored[k] = (stored[k] + v[k]) / 2.0;
    it->second.seen = true;
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0)
    return 0.0;
  return dot(a, b) / (na * nb);
}

std::vector<std::optional<ClassId>> assign_pseudo_labels(const PrototypeBuffer &buffer,
                                                         const Matrix &features_u, double tau) {
  std::vector<std::optional<ClassId>> out(features_u.rows());
  if (buffer.entries.empty())
    return out;
  if (features_u.cols() != buffer.dim)
    throw ShapeError("assign_pseudo_labels: features have " + std::to_string(features_u.cols()) +
                     " entries, prototypes have " + std::to_string(buffer.dim));
  for (std::size_t r = 0; r < features_u.rows(); ++r) {
    const auto h = features_u.row(r);
    std::optional<ClassId> best;
    double best_sim = 0.0;
    // std::map iterates in ascending ClassId, so strict > keeps the smallest
    // id on ties.
    for (const auto &[c, entry] : buffer.entries) {
      const double sim = cosine_similarity(h, entry.vector);
      if (!best || sim > best_sim) {
        best = c;
        best_sim = sim;
      }
    }
    if (best && best_sim > tau)
      out[r] = best;
  }
  return out;
}

} // namespace cirl
