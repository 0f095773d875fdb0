#pragma once

#include <cstdint>

#include "cirlab/model.hpp"

namespace cirl {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig &, const AdamConfig &) = default;
};

struct OptimizerState {
  Parameters m; // first moment
  Parameters v; // second moment
  std::uint64_t step = 0;
  double lr = 5e-4;

  static OptimizerState for_params(const Parameters &params, double lr);
};

// Bias-corrected adaptive-moment update:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// using opt.lr. Throws NumericalError on a non-finite gradient and ShapeError
// when the moment shapes do not mirror the parameters.
void adam_step(OptimizerState &opt, Parameters &params, const Parameters &grads,
               const AdamConfig &cfg);

// Grows the head moments with zero rows after a head expansion.
void expand_moments(OptimizerState &opt, const Parameters &params);

// Step decay: base_lr * gamma^floor(epoch / step_size).
double scheduler_lr(double base_lr, int epoch, int step_size, double gamma);

} // namespace cirl
