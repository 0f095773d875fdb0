#include "cirlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cirlab/errors.hpp"

namespace cirl {

void LossWeights::validate() const {
  auto check = [](double v, const char *name) {
    if (!std::isfinite(v) || v < 0.0)
      throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0");
  };
  check(alpha_l, "alpha_l");
  check(alpha_u, "alpha_u");
  check(beta, "beta");
  check(gamma, "gamma");
  if (!std::isfinite(temperature) || temperature <= 0.0)
    throw ConfigError("temperature must be finite and > 0");
}

std::vector<double> log_softmax(std::span<const double> z, double temperature) {
  std::vector<double> out(z.size());
  if (z.empty())
    return out;
  double mx = z[0] / temperature;
  for (double v : z)
    mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double v : z)
    sum += std::exp(v / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = z[i] / temperature - lse;
  return out;
}

namespace {

// Cross-entropy of one row against column `target`; writes softmax - onehot
// scaled by `scale` into grad_row.
double ce_row(std::span<const double> z, std::size_t target, double scale,
              std::span<double> grad_row) {
  if (target >= z.size())
    throw IndexError("label column " + std::to_string(target) + " outside " +
                     std::to_string(z.size()) + " logits");
  const auto lp = log_softmax(z);
  for (std::size_t k = 0; k < z.size(); ++k)
    grad_row[k] = scale * (std::exp(lp[k]) - (k == target ? 1.0 : 0.0));
  return -lp[target];
}

} // namespace

Term sup_loss_term(const Matrix &logits, std::span<const std::size_t> targets) {
  if (logits.rows() == 0)
    throw ShapeError("sup_loss: empty batch");
  if (targets.size() != logits.rows())
    throw ShapeError("sup_loss: " + std::to_string(targets.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  Term t{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    t.value += ce_row(logits.row(r), targets[r], inv, t.grad.row(r));
  t.value *= inv;
  return t;
}

double sup_loss(const Matrix &logits, std::span<const std::size_t> targets) {
  return sup_loss_term(logits, targets).value;
}

Term kd_loss_term(const Matrix &z, const Matrix &z_old, double temperature) {
  if (!z.same_shape(z_old))
    throw ShapeError("kd_loss: current logits " + std::to_string(z.rows()) + "x" +
                     std::to_string(z.cols()) + " vs old " + std::to_string(z_old.rows()) + "x" +
                     std::to_string(z_old.cols()));
  if (!(temperature > 0.0))
    throw ConfigError("kd_loss: temperature must be > 0");
  Term t{0.0, Matrix(z.rows(), z.cols())};
  if (z.rows() == 0)
    return t;
  const double inv = 1.0 / static_cast<double>(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto lp = log_softmax(z.row(r), temperature);
    const auto lq = log_softmax(z_old.row(r), temperature);
    double kl = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k)
      kl += std::exp(lp[k]) * (lp[k] - lq[k]);
    t.value += kl;
    // d KL / d z_k = p_k * ((log p_k - log q_k) - KL) / T
    auto g = t.grad.row(r);
    for (std::size_t k = 0; k < lp.size(); ++k)
      g[k] = inv * std::exp(lp[k]) * ((lp[k] - lq[k]) - kl) / temperature;
  }
  t.value *= inv;
  return t;
}

double kd_loss(const Matrix &z, const Matrix &z_old, double temperature) {
  return kd_loss_term(z, z_old, temperature).value;
}

namespace {

Term truncated_kd(const Matrix &z, const Matrix &z_old, double temperature) {
  if (z.rows() != z_old.rows())
    throw ShapeError("lwf_loss: batch sizes differ between current and old logits");
  if (z_old.cols() > z.cols())
    throw ShapeError("lwf_loss: old head is wider than the current head");
  if (z_old.cols() == z.cols())
    return kd_loss_term(z, z_old, temperature);
  Term narrow = kd_loss_term(leading_columns(z, z_old.cols()), z_old, temperature);
  Term wide{narrow.value, Matrix(z.rows(), z.cols())};
  for (std::size_t r = 0; r < z.rows(); ++r)
    std::copy(narrow.grad.row(r).begin(), narrow.grad.row(r).end(), wide.grad.row(r).begin());
  return wide;
}

void scale(Matrix &m, double s) {
  for (auto &v : m.flat())
    v *= s;
}

} // namespace

PairTerm lwf_loss_term(const Matrix &z_l, const Matrix &z_l_old, const Matrix &z_u,
                       const Matrix &z_u_old, const LossWeights &weights) {
  Term kl = truncated_kd(z_l, z_l_old, weights.temperature);
  Term ku = truncated_kd(z_u, z_u_old, weights.temperature);
  scale(kl.grad, weights.alpha_l);
  scale(ku.grad, weights.alpha_u);
  return {weights.alpha_l * kl.value + weights.alpha_u * ku.value, std::move(kl.grad),
          std::move(ku.grad)};
}

double lwf_loss(const Matrix &z_l, const Matrix &z_l_old, const Matrix &z_u,
                const Matrix &z_u_old, const LossWeights &weights) {
  return lwf_loss_term(z_l, z_l_old, z_u, z_u_old, weights).value;
}

namespace {

Term mse_term(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b))
    throw ShapeError("mse: feature shapes " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + " differ");
  Term t{0.0, Matrix(a.rows(), a.cols())};
  if (a.size() == 0)
    return t;
  const double inv = 1.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.flat()[i] - b.flat()[i];
    t.value += d * d;
    t.grad.flat()[i] = 2.0 * inv * d;
  }
  t.value *= inv;
  return t;
}

} // namespace

double mse(const Matrix &a, const Matrix &b) { return mse_term(a, b).value; }

PairTerm lfl_loss_term(const Matrix &h_l, const Matrix &h_l_old, const Matrix &h_u,
                       const Matrix &h_u_old, double beta) {
  Term ml = mse_term(h_l, h_l_old);
  Term mu = mse_term(h_u, h_u_old);
  scale(ml.grad, beta);
  scale(mu.grad, beta);
  return {beta * (ml.value + mu.value), std::move(ml.grad), std::move(mu.grad)};
}

double lfl_loss(const Matrix &h_l, const Matrix &h_l_old, const Matrix &h_u,
                const Matrix &h_u_old, double beta) {
  return lfl_loss_term(h_l, h_l_old, h_u, h_u_old, beta).value;
}

Term pseudo_loss_term(const Matrix &logits_u, std::span<const std::optional<std::size_t>> pseudo,
                      double gamma) {
  if (pseudo.size() != logits_u.rows())
    throw ShapeError("pseudo_loss: " + std::to_string(pseudo.size()) + " pseudo-labels for " +
                     std::to_string(logits_u.rows()) + " rows");
  Term t{0.0, Matrix(logits_u.rows(), logits_u.cols())};
  const auto assigned = static_cast<std::size_t>(
      std::count_if(pseudo.begin(), pseudo.end(), [](const auto &p) { return p.has_value(); }));
  if (assigned == 0)
    return t;
  const double inv = gamma / static_cast<double>(assigned);
  double sum = 0.0;
  for (std::size_t r = 0; r < logits_u.rows(); ++r)
    if (pseudo[r])
      sum += ce_row(logits_u.row(r), *pseudo[r], inv, t.grad.row(r));
  t.value = gamma * (sum / static_cast<double>(assigned));
  return t;
}

double pseudo_loss(const Matrix &logits_u, std::span<const std::optional<std::size_t>> pseudo,
                   double gamma) {
  return pseudo_loss_term(logits_u, pseudo, gamma).value;
}

LossBreakdown total_loss(double sup, double lwf, double lfl, double pseudo) {
  const std::pair<const char *, double> parts[] = {
      {"sup", sup}, {"lwf", lwf}, {"lfl", lfl}, {"pseudo", pseudo}};
  for (const auto &[name, v] : parts)
    if (!std::isfinite(v))
      throw NumericalError(std::string("loss component '") + name +
                           "' is not finite: " + std::to_string(v));
  return {sup, lwf, lfl, pseudo, sup + lwf + lfl + pseudo};
}

} // namespace cirl
