#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirl {

// Regularizer weights and softmax temperature of the combined objective.
struct LossWeights {
  double alpha_l = 2.0;     // distillation on the labeled stream
  double alpha_u = 2.0;     // distillation on the unlabeled stream
  double beta = 1000.0;     // feature drift penalty
  double gamma = 0.25;      // pseudo-label cross-entropy
  double temperature = 2.0; // KD softmax temperature

  // Throws ConfigError on negative or non-finite weights, or temperature <= 0.
  void validate() const;

  friend bool operator==(const LossWeights &, const LossWeights &) = default;
};

struct LossBreakdown {
  double sup = 0.0;
  double lwf = 0.0;
  double lfl = 0.0;
  double pseudo = 0.0;
  double total = 0.0;
};

// Loss value and its gradient with respect to the (current-model) input.
struct Term {
  double value = 0.0;
  Matrix grad;
};

// Loss over a labeled and an unlabeled batch with one gradient per batch.
struct PairTerm {
  double value = 0.0;
  Matrix grad_l;
  Matrix grad_u;
};

// Numerically stable log softmax(z / temperature).
std::vector<double> log_softmax(std::span<const double> z, double temperature = 1.0);

// Mean over rows of -log softmax(logits)[target]. Targets are logit columns.
// Throws IndexError for a target outside the row, ShapeError on empty batches.
Term sup_loss_term(const Matrix &logits, std::span<const std::size_t> targets);
double sup_loss(const Matrix &logits, std::span<const std::size_t> targets);

// Mean over rows of KL(softmax(z/T) || softmax(z_old/T)). The current model's
// distribution comes first and no T^2 factor is applied. z_old carries no
// gradient. Empty batches give 0.
Term kd_loss_term(const Matrix &z, const Matrix &z_old, double temperature);
double kd_loss(const Matrix &z, const Matrix &z_old, double temperature);

// alpha_l * KD(z_l, z_l_old) + alpha_u * KD(z_u, z_u_old). When the current
// head is wider than the old one, only its leading old-width columns enter
// the KD; gradients on the extra columns are zero.
PairTerm lwf_loss_term(const Matrix &z_l, const Matrix &z_l_old, const Matrix &z_u,
                       const Matrix &z_u_old, const LossWeights &weights);
double lwf_loss(const Matrix &z_l, const Matrix &z_l_old, const Matrix &z_u,
                const Matrix &z_u_old, const LossWeights &weights);

// Mean of squared elementwise differences over batch and feature dimensions.
double mse(const Matrix &a, const Matrix &b);

// beta * (MSE(h_l, h_l_old) + MSE(h_u, h_u_old)).
PairTerm lfl_loss_term(const Matrix &h_l, const Matrix &h_l_old, const Matrix &h_u,
                       const Matrix &h_u_old, double beta);
double lfl_loss(const Matrix &h_l, const Matrix &h_l_old, const Matrix &h_u,
                const Matrix &h_u_old, double beta);

// gamma * mean cross-entropy over rows that carry a pseudo-label; 0 when none do.
Term pseudo_loss_term(const Matrix &logits_u, std::span<const std::optional<std::size_t>> pseudo,
                      double gamma);
double pseudo_loss(const Matrix &logits_u, std::span<const std::optional<std::size_t>> pseudo,
                   double gamma);

// total = sup + lwf + lfl + pseudo. Throws NumericalError naming the first
// non-finite component.
LossBreakdown total_loss(double sup, double lwf, double lfl, double pseudo);

} // namespace cirl
