#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cirlab/rng.hpp"
#include "cirlab/stream.hpp"
#include "cirlab/tensor.hpp"

namespace cirl {

// Fully connected layer: y = W x + b with W stored out x in.
struct Dense {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }

  friend bool operator==(const Dense &, const Dense &) = default;
};

// Parameter tree shared by the model, its gradients and optimizer moments.
struct Parameters {
  std::vector<Dense> extractor; // hidden layers, ReLU after each
  Dense head;                   // classification head, one row per class

  // Every parameter array in a fixed order: extractor (W, b)..., head W, head b.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  std::size_t count() const;

  // Same shapes, all zeros.
  Parameters zeros_like() const;

  friend bool operator==(const Parameters &, const Parameters &) = default;
};

struct Architecture {
  std::size_t d_in = 32;
  std::vector<std::size_t> hidden = {64, 64};

  friend bool operator==(const Architecture &, const Architecture &) = default;
};

// f_theta is the ReLU MLP `extractor`; g_theta is the linear `head`.
// head_labels[j] is the ClassId predicted by logit column j.
struct ModelState {
  Architecture arch;
  Parameters params;
  std::vector<ClassId> head_labels;

  std::size_t d_in() const { return arch.d_in; }
  std::size_t d_feat() const { return arch.hidden.empty() ? arch.d_in : arch.hidden.back(); }
  std::size_t n_classes() const { return params.head.out(); }

  // Column index for a class, or n_classes() when the head has no such class.
  std::size_t column_of(ClassId c) const;

  friend bool operator==(const ModelState &, const ModelState &) = default;
};

// Frozen copy of a model. Holds its state through a shared immutable pointer so
// copies are cheap and can be handed to other threads.
class OldModelSnapshot {
public:
  explicit OldModelSnapshot(const ModelState &state)
      : state_(std::make_shared<const ModelState>(state)) {}

  const ModelState &state() const { return *state_; }

private:
  std::shared_ptr<const ModelState> state_;
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
ModelState init_model(const Architecture &arch, std::span<const ClassId> head_labels, Rng &rng);

// Appends one randomly initialised head row per new label; existing rows and
// the extractor are untouched. init_scale multiplies the Glorot bound.
ModelState expand_head(const ModelState &state, std::span<const ClassId> new_labels, Rng &rng,
                       double init_scale = 1.0);

OldModelSnapshot snapshot(const ModelState &state);

// Single-sample forwards.
std::vector<double> forward_features(const ModelState &state, std::span<const double> x);
std::vector<double> forward_logits(const ModelState &state, std::span<const double> h);

// Batched forward with the activations needed for backprop.
struct ForwardPass {
  Matrix input;
  std::vector<Matrix> activations; // post-ReLU output of each hidden layer
  Matrix features;                 // == activations.back() (or input without hidden layers)
  Matrix logits;
};

ForwardPass forward(const ModelState &state, const Matrix &x);
Matrix logits_for(const ModelState &state, const Matrix &x);

// dL/d(features) and dL/d(logits) for one batch. An empty matrix means zero.
struct OutputGrads {
  Matrix d_features;
  Matrix d_logits;
};

// Accumulates parameter gradients of one batch into `grads`.
void backward(const ModelState &state, const ForwardPass &pass, const OutputGrads &og,
              Parameters &grads);

// The loss callback receives one forward pass per input batch and must fill one
// OutputGrads per batch; it returns the scalar loss.
using LossFn = std::function<double(std::span<const ForwardPass>, std::span<OutputGrads>)>;

struct GradientResult {
  double loss = 0.0;
  Parameters grads;
};

// Throws NumericalError when the loss or a gradient entry is not finite.
GradientResult compute_gradients(const ModelState &state, std::span<const Matrix> inputs,
                                 const LossFn &loss);

} // namespace cirl
