#pragma once

#include <iosfwd>
#include <optional>

#include "cirlab/model.hpp"
#include "cirlab/prototypes.hpp"

namespace cirl {

// Binary checkpoint:
//   "CIRLCKPT" | u64 version | architecture | head labels | parameter arrays |
//   u8 has_buffer | [capacity, dim, entries (class id, seen, vector)]
// Integers are u64 little-endian; doubles are written as their IEEE-754 bit
// patterns, so save/load reproduces every parameter bit for bit.

inline constexpr char kCheckpointMagic[8] = {'C', 'I', 'R', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelState model;
  std::optional<PrototypeBuffer> buffer;
};

void save_checkpoint(std::ostream &out, const ModelState &model,
                     const PrototypeBuffer *buffer = nullptr);
Checkpoint load_checkpoint(std::istream &in);

} // namespace cirl
