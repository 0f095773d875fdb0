#include "cirlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cirlab/errors.hpp"

namespace cirl {

namespace {

class Writer {
public:
  explicit Writer(std::ostream &out) : out_(out) {}

  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i)
      b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void doubles(std::span<const double> v) {
    u64(v.size());
    for (double x : v)
      f64(x);
  }

private:
  std::ostream &out_;
};

class Reader {
public:
  explicit Reader(std::istream &in) : in_(in) {}

  std::uint64_t u64() {
    unsigned char b[8];
    if (!in_.read(reinterpret_cast<char *>(b), 8))
      throw FormatError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
      v = (v << 8) | b[i];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t bounded(std::uint64_t limit, const char *what) {
    const auto v = u64();
    if (v > limit)
      throw FormatError(std::string("checkpoint: implausible ") + what);
    return v;
  }
  void doubles(std::span<double> dst) {
    const auto n = u64();
    if (n != dst.size())
      throw FormatError("checkpoint: array length " + std::to_string(n) + ", expected " +
                        std::to_string(dst.size()));
    for (auto &x : dst)
      x = f64();
  }

private:
  std::istream &in_;
};

constexpr std::uint64_t kMaxDim = 1u << 24;

} // namespace

void save_checkpoint(std::ostream &out, const ModelState &model, const PrototypeBuffer *buffer) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  Writer w(out);
  w.u64(kCheckpointVersion);
  w.u64(model.arch.d_in);
  w.u64(model.arch.hidden.size());
  for (auto width : model.arch.hidden)
    w.u64(width);
  w.u64(model.head_labels.size());
  for (auto c : model.head_labels)
    w.u64(c);
  for (const auto &t : model.params.tensors())
    w.doubles(t);
  w.u64(buffer ? 1 : 0);
  if (buffer) {
    w.u64(buffer->capacity);
    w.u64(buffer->dim);
    w.u64(buffer->entries.size());
    for (const auto &[c, e] : buffer->entries) {
      w.u64(c);
      w.u64(e.seen ? 1 : 0);
      w.doubles(e.vector);
    }
  }
  if (!out)
    throw FormatError("checkpoint: write failed");
}

Checkpoint load_checkpoint(std::istream &in) {
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError("not a cirlab checkpoint");
  Reader r(in);
  const auto version = r.u64();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  auto &m = ck.model;
  m.arch.d_in = r.bounded(kMaxDim, "d_in");
  m.arch.hidden.resize(r.bounded(64, "depth"));
  for (auto &width : m.arch.hidden)
    width = r.bounded(kMaxDim, "width");
  m.head_labels.resize(r.bounded(kMaxDim, "class count"));
  for (auto &c : m.head_labels)
    c = static_cast<ClassId>(r.bounded(UINT32_MAX, "class id"));

  std::size_t fan_in = m.arch.d_in;
  for (auto width : m.arch.hidden) {
    m.params.extractor.push_back({Matrix(width, fan_in), std::vector<double>(width)});
    fan_in = width;
  }
  m.params.head = {Matrix(m.head_labels.size(), fan_in),
                   std::vector<double>(m.head_labels.size())};
  for (auto t : m.params.tensors())
    r.doubles(t);

  if (r.u64() != 0) {
    PrototypeBuffer b;
    b.capacity = r.bounded(kMaxDim, "buffer capacity");
    b.dim = r.bounded(kMaxDim, "buffer dimension");
    const auto n = r.bounded(b.capacity, "buffer size");
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto c = static_cast<ClassId>(r.bounded(UINT32_MAX, "class id"));
      PrototypeEntry e;
      e.seen = r.u64() != 0;
      e.vector.resize(b.dim);
      r.doubles(e.vector);
      b.entries.emplace(c, std::move(e));
    }
    ck.buffer = std::move(b);
  }
  return ck;
}

} // namespace cirl
