#include "cirlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "cirlab/errors.hpp"

namespace cirl {

namespace {

void init_dense(Dense &layer, std::size_t in, std::size_t out, Rng &rng, double scale = 1.0) {
  const double bound = scale * std::sqrt(6.0 / static_cast<double>(in + out));
  layer.weight = Matrix(out, in);
  for (auto &w : layer.weight.flat())
    w = rng.uniform(-bound, bound);
  layer.bias.assign(out, 0.0);
}

// out = x W^T + b, one row per sample.
Matrix affine(const Dense &layer, const Matrix &x) {
  if (x.cols() != layer.in())
    throw ShapeError("layer expects " + std::to_string(layer.in()) + " inputs, got " +
                     std::to_string(x.cols()));
  Matrix out(x.rows(), layer.out());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    auto orow = out.row(r);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      const auto wr = layer.weight.row(o);
      double s = layer.bias[o];
      for (std::size_t i = 0; i < xr.size(); ++i)
        s += wr[i] * xr[i];
      orow[o] = s;
    }
  }
  return out;
}

void relu_inplace(Matrix &m) {
  for (auto &v : m.flat())
    v = v > 0.0 ? v : 0.0;
}

// grads += dY^T X for weights and column sums of dY for bias; returns dY W.
Matrix dense_backward(const Dense &layer, const Matrix &x, const Matrix &dy, Dense &grad) {
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const auto xr = x.row(r);
    const auto gr = dy.row(r);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      const double g = gr[o];
      if (g == 0.0)
        continue;
      auto wg = grad.weight.row(o);
      for (std::size_t i = 0; i < xr.size(); ++i)
        wg[i] += g * xr[i];
      grad.bias[o] += g;
    }
  }
  Matrix dx(dy.rows(), layer.in());
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const auto gr = dy.row(r);
    auto dxr = dx.row(r);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      const double g = gr[o];
      if (g == 0.0)
        continue;
      const auto wr = layer.weight.row(o);
      for (std::size_t i = 0; i < dxr.size(); ++i)
        dxr[i] += g * wr[i];
    }
  }
  return dx;
}

} // namespace

std::vector<std::span<double>> Parameters::tensors() {
  std::vector<std::span<double>> out;
  for (auto &layer : extractor) {
    out.push_back(layer.weight.flat());
    out.push_back(layer.bias);
  }
  out.push_back(head.weight.flat());
  out.push_back(head.bias);
  return out;
}

std::vector<std::span<const double>> Parameters::tensors() const {
  std::vector<std::span<const double>> out;
  for (const auto &layer : extractor) {
    out.push_back(layer.weight.flat());
    out.push_back(layer.bias);
  }
  out.push_back(head.weight.flat());
  out.push_back(head.bias);
  return out;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto &t : tensors())
    n += t.size();
  return n;
}

Parameters Parameters::zeros_like() const {
  Parameters z;
  for (const auto &layer : extractor)
    z.extractor.push_back({Matrix(layer.out(), layer.in()), std::vector<double>(layer.out())});
  z.head = {Matrix(head.out(), head.in()), std::vector<double>(head.out())};
  return z;
}

std::size_t ModelState::column_of(ClassId c) const {
  const auto it = std::find(head_labels.begin(), head_labels.end(), c);
  return static_cast<std::size_t>(it - head_labels.begin());
}

ModelState init_model(const Architecture &arch, std::span<const ClassId> head_labels, Rng &rng) {
  if (arch.d_in == 0)
    throw ConfigError("model: d_in must be positive");
  ModelState s;
  s.arch = arch;
  std::size_t fan_in = arch.d_in;
  for (std::size_t width : arch.hidden) {
    if (width == 0)
      throw ConfigError("model: hidden widths must be positive");
    Dense layer;
    init_dense(layer, fan_in, width, rng);
    s.params.extractor.push_back(std::move(layer));
    fan_in = width;
  }
  init_dense(s.params.head, fan_in, head_labels.size(), rng);
  s.head_labels.assign(head_labels.begin(), head_labels.end());
  return s;
}

ModelState expand_head(const ModelState &state, std::span<const ClassId> new_labels, Rng &rng,
                       double init_scale) {
  if (new_labels.empty())
    return state;
  ModelState out = state;
  const std::size_t d_feat = state.d_feat();
  const std::size_t old_n = state.n_classes();
  const std::size_t new_n = old_n + new_labels.size();

  Dense fresh;
  init_dense(fresh, d_feat, new_n, rng, init_scale);

  Dense head{Matrix(new_n, d_feat), std::vector<double>(new_n, 0.0)};
  std::copy(state.params.head.weight.flat().begin(), state.params.head.weight.flat().end(),
            head.weight.flat().begin());
  std::copy(state.params.head.bias.begin(), state.params.head.bias.end(), head.bias.begin());
  for (std::size_t r = old_n; r < new_n; ++r) {
    const auto src = fresh.weight.row(r);
    std::copy(src.begin(), src.end(), head.weight.row(r).begin());
  }
  out.params.head = std::move(head);
  out.head_labels.insert(out.head_labels.end(), new_labels.begin(), new_labels.end());
  return out;
}

OldModelSnapshot snapshot(const ModelState &state) { return OldModelSnapshot(state); }

std::vector<double> forward_features(const ModelState &state, std::span<const double> x) {
  if (x.size() != state.d_in())
    throw ShapeError("forward_features: input has " + std::to_string(x.size()) +
                     " entries, model expects " + std::to_string(state.d_in()));
  Matrix m(1, x.size());
  std::copy(x.begin(), x.end(), m.row(0).begin());
  for (const auto &layer : state.params.extractor) {
    m = affine(layer, m);
    relu_inplace(m);
  }
  return m.storage();
}

std::vector<double> forward_logits(const ModelState &state, std::span<const double> h) {
  if (h.size() != state.d_feat())
    throw ShapeError("forward_logits: feature vector has " + std::to_string(h.size()) +
                     " entries, model expects " + std::to_string(state.d_feat()));
  Matrix m(1, h.size());
  std::copy(h.begin(), h.end(), m.row(0).begin());
  return affine(state.params.head, m).storage();
}

ForwardPass forward(const ModelState &state, const Matrix &x) {
  if (x.cols() != state.d_in())
    throw ShapeError("forward: batch has " + std::to_string(x.cols()) +
                     " columns, model expects " + std::to_string(state.d_in()));
  ForwardPass p;
  p.input = x;
  const Matrix *prev = &p.input;
  p.activations.reserve(state.params.extractor.size());
  for (const auto &layer : state.params.extractor) {
    Matrix a = affine(layer, *prev);
    relu_inplace(a);
    p.activations.push_back(std::move(a));
    prev = &p.activations.back();
  }
  p.features = *prev;
  p.logits = affine(state.params.head, p.features);
  return p;
}

Matrix logits_for(const ModelState &state, const Matrix &x) {
  if (x.cols() != state.d_in())
    throw ShapeError("logits_for: batch has " + std::to_string(x.cols()) +
                     " columns, model expects " + std::to_string(state.d_in()));
  Matrix m = x;
  for (const auto &layer : state.params.extractor) {
    m = affine(layer, m);
    relu_inplace(m);
  }
  return affine(state.params.head, m);
}

void backward(const ModelState &state, const ForwardPass &pass, const OutputGrads &og,
              Parameters &grads) {
  const std::size_t batch = pass.input.rows();
  Matrix d_feat(batch, state.d_feat());
  if (!og.d_logits.empty()) {
    if (og.d_logits.rows() != batch || og.d_logits.cols() != state.n_classes())
      throw ShapeError("backward: d_logits shape does not match the logits");
    d_feat = dense_backward(state.params.head, pass.features, og.d_logits, grads.head);
  }
  if (!og.d_features.empty()) {
    if (!og.d_features.same_shape(d_feat))
      throw ShapeError("backward: d_features shape does not match the features");
    for (std::size_t i = 0; i < d_feat.size(); ++i)
      d_feat.flat()[i] += og.d_features.flat()[i];
  }

  const auto &layers = state.params.extractor;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix &act = pass.activations[l];
    // ReLU subgradient is 0 at exactly 0.
    for (std::size_t i = 0; i < d_feat.size(); ++i)
      if (!(act.flat()[i] > 0.0))
        d_feat.flat()[i] = 0.0;
    const Matrix &input = l == 0 ? pass.input : pass.activations[l - 1];
    d_feat = dense_backward(layers[l], input, d_feat, grads.extractor[l]);
  }
}

GradientResult compute_gradients(const ModelState &state, std::span<const Matrix> inputs,
                                 const LossFn &loss) {
  std::vector<ForwardPass> passes;
  passes.reserve(inputs.size());
  for (const auto &x : inputs)
    passes.push_back(forward(state, x));
  std::vector<OutputGrads> og(inputs.size());

  GradientResult result;
  result.loss = loss(passes, og);
  if (!std::isfinite(result.loss))
    throw NumericalError("compute_gradients: loss is not finite (" +
                         std::to_string(result.loss) + ") over " +
                         std::to_string(inputs.size()) + " batch(es)");
  result.grads = state.params.zeros_like();
  for (std::size_t b = 0; b < passes.size(); ++b)
    backward(state, passes[b], og[b], result.grads);

  const auto tensors = std::as_const(result.grads).tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t)
    if (!all_finite(tensors[t]))
      throw NumericalError("compute_gradients: non-finite gradient in parameter tensor " +
                           std::to_string(t));
  return result;
}

} // namespace cirl
