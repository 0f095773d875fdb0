#include "cirlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "cirlab/errors.hpp"
#include "cirlab/rng.hpp"

namespace cirl {

namespace {

constexpr std::uint64_t kTagInit = 100;
constexpr std::uint64_t kTagExpand = 200000;
constexpr std::uint64_t kTagValSplit = 300000;
constexpr std::uint64_t kTagLabeledOrder = 400000;
constexpr std::uint64_t kTagUnlabeledOrder = 500000;

void add_into(Matrix &dst, const Matrix &src) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst.flat()[i] += src.flat()[i];
}

Matrix gather_rows(const Matrix &m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix features_of(std::span<const Sample> samples, std::size_t d_in) {
  Matrix x(samples.size(), d_in);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != d_in)
      throw ShapeError("sample " + std::to_string(samples[i].id) + " has dimension " +
                       std::to_string(samples[i].features.size()) + ", model expects " +
                       std::to_string(d_in));
    std::copy(samples[i].features.begin(), samples[i].features.end(), x.row(i).begin());
  }
  return x;
}

void emit(const TrainHooks *hooks, Phase p, int experience) {
  if (hooks && hooks->on_phase)
    hooks->on_phase(p, experience);
}

bool wants(LossTerm selected, LossTerm t) { return selected == LossTerm::Total || selected == t; }

LossFn make_loss(const StepBatch &batch, const LossWeights &weights, LossTerm term,
                 LossBreakdown &parts) {
  return [&batch, &weights, term, &parts](std::span<const ForwardPass> p,
                                          std::span<OutputGrads> og) {
    const auto &pl = p[0];
    const auto &pu = p[1];
    Matrix dl(pl.logits.rows(), pl.logits.cols());
    Matrix du(pu.logits.rows(), pu.logits.cols());
    Matrix dfl, dfu;
    double sup = 0.0, lwf = 0.0, lfl = 0.0, pseudo = 0.0;

    if (wants(term, LossTerm::Sup)) {
      const Term t = sup_loss_term(pl.logits, batch.y_l);
      sup = t.value;
      add_into(dl, t.grad);
    }
    if (batch.has_old && wants(term, LossTerm::Lwf)) {
      const PairTerm t =
          lwf_loss_term(pl.logits, batch.old_logits_l, pu.logits, batch.old_logits_u, weights);
      lwf = t.value;
      add_into(dl, t.grad_l);
      add_into(du, t.grad_u);
    }
    if (batch.has_old && wants(term, LossTerm::Lfl)) {
      PairTerm t = lfl_loss_term(pl.features, batch.old_features_l, pu.features,
                                 batch.old_features_u, weights.beta);
      lfl = t.value;
      dfl = std::move(t.grad_l);
      dfu = std::move(t.grad_u);
    }
    if (wants(term, LossTerm::Pseudo)) {
      const Term t = pseudo_loss_term(pu.logits, batch.pseudo_u, weights.gamma);
      pseudo = t.value;
      add_into(du, t.grad);
    }
    parts = total_loss(sup, lwf, lfl, pseudo);
    og[0] = {std::move(dfl), std::move(dl)};
    og[1] = {std::move(dfu), std::move(du)};
    return parts.total;
  };
}

std::vector<ClassId> sorted_present(const Experience &exp) {
  std::vector<ClassId> present = exp.present_classes;
  std::sort(present.begin(), present.end());
  return present;
}

} // namespace

std::string_view to_string(HeadPolicy p) { return p == HeadPolicy::Lazy ? "lazy" : "fixed"; }
std::string_view to_string(Method m) { return m == Method::Cir ? "cir" : "finetune"; }

HeadPolicy parse_head_policy(std::string_view text) {
  if (text == "lazy")
    return HeadPolicy::Lazy;
  if (text == "fixed")
    return HeadPolicy::Fixed;
  throw ConfigError("unknown head policy '" + std::string(text) + "' (expected lazy or fixed)");
}

Method parse_method(std::string_view text) {
  if (text == "cir")
    return Method::Cir;
  if (text == "finetune")
    return Method::FineTune;
  throw ConfigError("unknown method '" + std::string(text) + "' (expected cir or finetune)");
}

std::string_view to_string(Phase p) {
  switch (p) {
  case Phase::BufferUpdate:
    return "buffer_update";
  case Phase::HeadExpansion:
    return "head_expansion";
  case Phase::PseudoLabel:
    return "pseudo_label";
  case Phase::GradientStep:
    return "gradient_step";
  case Phase::EpochEnd:
    return "epoch_end";
  case Phase::Snapshot:
    return "snapshot";
  }
  return "?";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string &m) { throw ConfigError("train config: " + m); };
  if (!(lr > 0.0) || !std::isfinite(lr))
    fail("lr must be > 0");
  if (!(scheduler_gamma > 0.0 && scheduler_gamma <= 1.0))
    fail("scheduler_gamma must lie in (0, 1]");
  if (scheduler_step < 1)
    fail("scheduler_step must be >= 1");
  if (max_epochs < 1)
    fail("max_epochs must be >= 1");
  if (batch_size_train < 1 || batch_size_eval < 1)
    fail("batch sizes must be >= 1");
  if (early_stop_patience < 0)
    fail("early_stop_patience must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    fail("val_fraction must lie in [0, 1)");
  if (!std::isfinite(tau))
    fail("tau must be finite");
  if (buffer_capacity < 1)
    fail("buffer_capacity must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0))
    fail("adam constants out of range");
  for (auto w : hidden)
    if (w == 0)
      fail("hidden widths must be positive");
  weights.validate();
}

TrainerState init_trainer(const TrainConfig &cfg, std::size_t d_in, int n_learnable) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kTagInit));
  std::vector<ClassId> labels;
  if (cfg.head_policy == HeadPolicy::Fixed) {
    labels.resize(static_cast<std::size_t>(n_learnable));
    std::iota(labels.begin(), labels.end(), ClassId{0});
  }
  TrainerState st;
  st.model = init_model(Architecture{d_in, cfg.hidden}, labels, rng);
  st.buffer.capacity = cfg.buffer_capacity;
  st.buffer.dim = st.model.d_feat();
  st.optimizer = OptimizerState::for_params(st.model.params, cfg.lr);
  return st;
}

StepResult objective(const ModelState &model, const StepBatch &batch, const LossWeights &weights,
                     LossTerm term) {
  LossBreakdown parts;
  const Matrix inputs[] = {batch.x_l, batch.x_u};
  auto g = compute_gradients(model, inputs, make_loss(batch, weights, term, parts));
  return {parts, std::move(g.grads)};
}

double objective_value(const ModelState &model, const StepBatch &batch, const LossWeights &weights,
                       LossTerm term) {
  LossBreakdown parts;
  const ForwardPass passes[] = {forward(model, batch.x_l), forward(model, batch.x_u)};
  std::vector<OutputGrads> og(2);
  return make_loss(batch, weights, term, parts)(passes, og);
}

ExperienceResult train_experience(TrainerState &state, const Experience &exp,
                                  const TrainConfig &cfg, const TrainHooks *hooks) {
  cfg.validate();
  if (exp.labeled.empty())
    throw ExperienceError("experience " + std::to_string(exp.index) + " has no labeled samples");

  const int t = exp.index;
  const auto tu = static_cast<std::uint64_t>(t);
  const bool cir = cfg.method == Method::Cir;
  const std::size_t d_in = state.model.d_in();
  ExperienceResult result;

  const Matrix x_lab = features_of(exp.labeled, d_in);
  std::vector<ClassId> y_lab(exp.labeled.size());
  for (std::size_t i = 0; i < exp.labeled.size(); ++i) {
    if (!exp.labeled[i].label)
      throw ExperienceError("labeled sample " + std::to_string(exp.labeled[i].id) +
                            " carries no label");
    y_lab[i] = *exp.labeled[i].label;
  }

  // (1) prototypes from the start-of-experience embedder
  if (cir) {
    const Matrix h = forward(state.model, x_lab).features;
    state.buffer = update_buffer(state.buffer, compute_class_prototypes(h, y_lab));
    emit(hooks, Phase::BufferUpdate, t);
  }

  // (2) head growth for classes the head has never seen
  std::vector<ClassId> fresh;
  for (ClassId c : sorted_present(exp))
    if (state.model.column_of(c) == state.model.n_classes())
      fresh.push_back(c);
  if (!fresh.empty()) {
    if (cfg.head_policy == HeadPolicy::Fixed)
      throw ExperienceError("class " + std::to_string(fresh.front()) +
                            " is outside the fixed head");
    Rng rng(derive_seed(cfg.seed, kTagExpand + tu));
    state.model = expand_head(state.model, fresh, rng);
    expand_moments(state.optimizer, state.model.params);
    emit(hooks, Phase::HeadExpansion, t);
  }
  result.n_new_classes = fresh.size();
  for (ClassId c : exp.present_classes)
    state.seen_classes.insert(c);

  // (3) pseudo-labels, fixed for the whole experience
  const Matrix x_unl = cir ? features_of(exp.unlabeled, d_in) : Matrix(0, d_in);
  std::vector<std::optional<std::size_t>> pseudo_cols(x_unl.rows());
  int pseudo_assigned = 0, pseudo_correct = 0;
  if (cir) {
    const auto pseudo = assign_pseudo_labels(state.buffer, forward(state.model, x_unl).features,
                                             cfg.tau);
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
      if (!pseudo[i])
        continue;
      const std::size_t col = state.model.column_of(*pseudo[i]);
      if (col == state.model.n_classes())
        continue; // prototype for a class the head does not carry (fixed head)
      pseudo_cols[i] = col;
      ++pseudo_assigned;
      if (*pseudo[i] == exp.unlabeled[i].true_label)
        ++pseudo_correct;
    }
    emit(hooks, Phase::PseudoLabel, t);
  }

  // (4) stratified train/val split
  std::vector<std::size_t> train_rows, val_rows;
  {
    std::map<ClassId, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y_lab.size(); ++i)
      by_class[y_lab[i]].push_back(i);
    Rng rng(derive_seed(cfg.seed, kTagValSplit + tu));
    for (auto &[c, rows] : by_class) {
      rng.shuffle(std::span<std::size_t>(rows));
      const auto n_val = static_cast<std::size_t>(
          std::floor(cfg.val_fraction * static_cast<double>(rows.size())));
      val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
      train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val),
                        rows.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(val_rows.begin(), val_rows.end());
  }
  const Matrix x_train = gather_rows(x_lab, train_rows);
  std::vector<std::size_t> y_train(train_rows.size());
  for (std::size_t i = 0; i < train_rows.size(); ++i)
    y_train[i] = state.model.column_of(y_lab[train_rows[i]]);
  const Matrix x_val = gather_rows(x_lab, val_rows);

  // Frozen-model outputs never change within the experience.
  const bool has_old = cir && state.old_model.has_value();
  ForwardPass old_train, old_unl;
  if (has_old) {
    old_train = forward(state.old_model->state(), x_train);
    old_unl = forward(state.old_model->state(), x_unl);
  }

  if (cfg.reset_optimizer)
    state.optimizer = OptimizerState::for_params(state.model.params, cfg.lr);

  Rng lab_rng(derive_seed(cfg.seed, kTagLabeledOrder + tu));
  Rng unl_rng(derive_seed(cfg.seed, kTagUnlabeledOrder + tu));
  std::vector<std::size_t> lab_order(train_rows.size());
  std::iota(lab_order.begin(), lab_order.end(), std::size_t{0});
  std::vector<std::size_t> unl_order(x_unl.rows());
  std::iota(unl_order.begin(), unl_order.end(), std::size_t{0});
  std::size_t unl_cursor = unl_order.size(); // forces a shuffle on first use

  const auto bs = static_cast<std::size_t>(cfg.batch_size_train);
  const std::size_t bs_u = std::min(bs, unl_order.size());

  std::optional<double> best_acc;
  Parameters best_params = state.model.params;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    state.optimizer.lr = scheduler_lr(cfg.lr, epoch, cfg.scheduler_step, cfg.scheduler_gamma);
    EpochLog log;
    log.experience = t;
    log.epoch = epoch;
    log.lr = state.optimizer.lr;
    log.pseudo_assigned = pseudo_assigned;
    log.pseudo_correct = pseudo_correct;

    lab_rng.shuffle(std::span<std::size_t>(lab_order));
    for (std::size_t start = 0; start < lab_order.size(); start += bs) {
      const std::size_t n = std::min(bs, lab_order.size() - start);
      const std::span<const std::size_t> rows(lab_order.data() + start, n);

      StepBatch batch;
      batch.x_l = gather_rows(x_train, rows);
      batch.y_l.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        batch.y_l[i] = y_train[rows[i]];

      Parameters grads;
      LossBreakdown parts;
      if (cir) {
        std::vector<std::size_t> urows;
        urows.reserve(bs_u);
        while (urows.size() < bs_u) {
          if (unl_cursor >= unl_order.size()) {
            unl_rng.shuffle(std::span<std::size_t>(unl_order));
            unl_cursor = 0;
          }
          urows.push_back(unl_order[unl_cursor++]);
        }
        batch.x_u = gather_rows(x_unl, urows);
        batch.pseudo_u.resize(urows.size());
        for (std::size_t i = 0; i < urows.size(); ++i)
          batch.pseudo_u[i] = pseudo_cols[urows[i]];
        batch.has_old = has_old;
        if (has_old) {
          batch.old_logits_l = gather_rows(old_train.logits, rows);
          batch.old_features_l = gather_rows(old_train.features, rows);
          batch.old_logits_u = gather_rows(old_unl.logits, urows);
          batch.old_features_u = gather_rows(old_unl.features, urows);
        }
        auto step = objective(state.model, batch, cfg.weights);
        grads = std::move(step.grads);
        parts = step.breakdown;
      } else {
        const Matrix inputs[] = {batch.x_l};
        auto g = compute_gradients(
            state.model, inputs,
            [&](std::span<const ForwardPass> p, std::span<OutputGrads> og) {
              Term s = sup_loss_term(p[0].logits, batch.y_l);
              og[0].d_logits = std::move(s.grad);
              parts = total_loss(s.value, 0.0, 0.0, 0.0);
              return parts.total;
            });
        grads = std::move(g.grads);
      }

      adam_step(state.optimizer, state.model.params, grads, cfg.adam);
      emit(hooks, Phase::GradientStep, t);
      log.loss.sup += parts.sup;
      log.loss.lwf += parts.lwf;
      log.loss.lfl += parts.lfl;
      log.loss.pseudo += parts.pseudo;
      log.loss.total += parts.total;
      ++log.steps;
    }
    if (log.steps > 0) {
      const double inv = 1.0 / log.steps;
      log.loss.sup *= inv;
      log.loss.lwf *= inv;
      log.loss.lfl *= inv;
      log.loss.pseudo *= inv;
      log.loss.total *= inv;
    }
    for (const auto &tensor : std::as_const(state.model.params).tensors())
      if (!all_finite(tensor))
        throw NumericalError("experience " + std::to_string(t) + " epoch " +
                             std::to_string(epoch) + ": parameters became non-finite");

    bool stop = false;
    if (!val_rows.empty()) {
      const auto pred = predict(state.model, x_val);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < val_rows.size(); ++i)
        if (pred[i] == y_lab[val_rows[i]])
          ++correct;
      const double acc = static_cast<double>(correct) / static_cast<double>(val_rows.size());
      log.val_accuracy = acc;
      if (!best_acc || acc > *best_acc) {
        best_acc = acc;
        best_params = state.model.params;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.early_stop_patience && cfg.early_stop_patience > 0) {
        stop = true;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(log);
    emit(hooks, Phase::EpochEnd, t);
    if (stop)
      break;
  }
  if (!val_rows.empty())
    state.model.params = std::move(best_params);

  // (6) the trained model becomes the next experience's frozen reference
  state.old_model = snapshot(state.model);
  emit(hooks, Phase::Snapshot, t);
  state.experience_index = t + 1;
  return result;
}

RunResult run_stream(const std::vector<Experience> &stream, const TestSet &test,
                     const TrainConfig &cfg, const StreamConfig &stream_cfg,
                     const TrainHooks *hooks, const ExperienceCallback &after_experience) {
  if (stream.empty())
    throw ExperienceError("run_stream: empty stream");
  RunResult run;
  run.state = init_trainer(cfg, static_cast<std::size_t>(stream_cfg.d_in), stream_cfg.n_learnable);
  run.report.method = std::string(to_string(cfg.method));
  run.report.scenario = stream_cfg.scenario;
  run.report.seed = cfg.seed;
  for (const auto &exp : stream) {
    auto res = train_experience(run.state, exp, cfg, hooks);
    const std::vector<ClassId> seen(run.state.seen_classes.begin(), run.state.seen_classes.end());
    record_experience(run.report, run.state.model, test, exp.index, exp.present_classes, seen,
                      static_cast<std::size_t>(cfg.batch_size_eval));
    run.log.insert(run.log.end(), res.epochs.begin(), res.epochs.end());
    if (after_experience)
      after_experience(run.state, res);
  }
  return run;
}

void write_epoch_log_line(std::ostream &out, const EpochLog &e) {
  nlohmann::json j;
  j["experience"] = e.experience;
  j["epoch"] = e.epoch;
  j["lr"] = e.lr;
  j["steps"] = e.steps;
  j["loss"] = {{"sup", e.loss.sup},
               {"lwf", e.loss.lwf},
               {"lfl", e.loss.lfl},
               {"pseudo", e.loss.pseudo},
               {"total", e.loss.total}};
  j["val_accuracy"] = e.val_accuracy ? nlohmann::json(*e.val_accuracy) : nlohmann::json(nullptr);
  j["pseudo_assigned"] = e.pseudo_assigned;
  j["pseudo_correct"] = e.pseudo_correct;
  j["pseudo_precision"] =
      e.pseudo_assigned > 0
          ? nlohmann::json(static_cast<double>(e.pseudo_correct) / e.pseudo_assigned)
          : nlohmann::json(nullptr);
  out << j.dump() << '\n';
}

} // namespace cirl
