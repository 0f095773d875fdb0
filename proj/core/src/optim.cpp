#include "cirlab/optim.hpp"

#include <cmath>
#include <string>

#include "cirlab/errors.hpp"

namespace cirl {

OptimizerState OptimizerState::for_params(const Parameters &params, double lr) {
  return {params.zeros_like(), params.zeros_like(), 0, lr};
}

void adam_step(OptimizerState &opt, Parameters &params, const Parameters &grads,
               const AdamConfig &cfg) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = opt.m.tensors();
  auto v = opt.v.tensors();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw ShapeError("adam_step: parameter tree mismatch");
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (g[t].size() != p[t].size() || m[t].size() != p[t].size() || v[t].size() != p[t].size())
      throw ShapeError("adam_step: tensor " + std::to_string(t) + " shape mismatch");
    if (!all_finite(g[t]))
      throw NumericalError("adam_step: non-finite gradient in tensor " + std::to_string(t));
  }

  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double gi = g[t][i];
      m[t][i] = cfg.beta1 * m[t][i] + (1.0 - cfg.beta1) * gi;
      v[t][i] = cfg.beta2 * v[t][i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[t][i] / bc1;
      const double v_hat = v[t][i] / bc2;
      p[t][i] -= opt.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void expand_moments(OptimizerState &opt, const Parameters &params) {
  auto grow = [&](Dense &moment) {
    const std::size_t old_rows = moment.out();
    if (old_rows == params.head.out())
      return;
    Dense bigger{Matrix(params.head.out(), params.head.in()),
                 std::vector<double>(params.head.out(), 0.0)};
    for (std::size_t r = 0; r < old_rows; ++r) {
      const auto src = moment.weight.row(r);
      std::copy(src.begin(), src.end(), bigger.weight.row(r).begin());
      bigger.bias[r] = moment.bias[r];
    }
    moment = std::move(bigger);
  };
  grow(opt.m.head);
  grow(opt.v.head);
}

double scheduler_lr(double base_lr, int epoch, int step_size, double gamma) {
  if (step_size <= 0)
    return base_lr;
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

} // namespace cirl
