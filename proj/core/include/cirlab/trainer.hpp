#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cirlab/eval.hpp"
#include "cirlab/losses.hpp"
#include "cirlab/model.hpp"
#include "cirlab/optim.hpp"
#include "cirlab/prototypes.hpp"
#include "cirlab/stream.hpp"

namespace cirl {

enum class HeadPolicy { Lazy, Fixed };
// Cir: supervised + distillation + feature drift + pseudo-label terms.
// FineTune: supervised cross-entropy only; no old model, prototypes or
// unlabeled data are touched.
enum class Method { Cir, FineTune };

std::string_view to_string(HeadPolicy p);
std::string_view to_string(Method m);
HeadPolicy parse_head_policy(std::string_view text);
Method parse_method(std::string_view text);

struct TrainConfig {
  double lr = 5e-4;
  int scheduler_step = 5;
  double scheduler_gamma = 0.5;
  int batch_size_train = 32;
  int batch_size_eval = 256;
  int max_epochs = 15;
  int early_stop_patience = 3;
  double val_fraction = 0.2;
  LossWeights weights;
  double tau = 0.5;
  std::size_t buffer_capacity = 100;
  std::vector<std::size_t> hidden = {64, 64};
  HeadPolicy head_policy = HeadPolicy::Lazy;
  Method method = Method::Cir;
  bool reset_optimizer = false; // fresh Adam moments at every experience
  AdamConfig adam;              // lr field is ignored; `lr` above is the base rate
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

struct TrainerState {
  ModelState model;
  std::optional<OldModelSnapshot> old_model;
  PrototypeBuffer buffer;
  OptimizerState optimizer;
  std::set<ClassId> seen_classes;
  int experience_index = 0;
};

// Fresh state: an untrained extractor and either an empty head (lazy) or one
// row per learnable class (fixed).
TrainerState init_trainer(const TrainConfig &cfg, std::size_t d_in, int n_learnable);

enum class Phase { BufferUpdate, HeadExpansion, PseudoLabel, GradientStep, EpochEnd, Snapshot };
std::string_view to_string(Phase p);

struct TrainHooks {
  std::function<void(Phase, int experience)> on_phase;
};

struct EpochLog {
  int experience = 0;
  int epoch = 0;
  double lr = 0.0;
  int steps = 0;
  LossBreakdown loss; // mean over the epoch's steps
  std::optional<double> val_accuracy;
  int pseudo_assigned = 0;
  int pseudo_correct = 0; // audit against true labels, never used for training
};

struct ExperienceResult {
  std::vector<EpochLog> epochs;
  int best_epoch = -1; // epoch whose parameters were kept
  std::size_t n_new_classes = 0;
};

// Per-step objective over a labeled and an unlabeled batch. `old_*` hold the
// frozen model's logits/features on the same rows; they are empty when there
// is no old model yet, in which case the distillation and feature terms are 0.
struct StepBatch {
  Matrix x_l;
  std::vector<std::size_t> y_l; // logit columns
  Matrix x_u;
  std::vector<std::optional<std::size_t>> pseudo_u; // logit columns
  bool has_old = false;
  Matrix old_logits_l, old_features_l;
  Matrix old_logits_u, old_features_u;
};

enum class LossTerm { Sup, Lwf, Lfl, Pseudo, Total };

// Evaluates the selected term (or the full sum) for `model` on `batch` with
// parameter gradients. Used by training and by gradient checks.
struct StepResult {
  LossBreakdown breakdown;
  Parameters grads;
};
StepResult objective(const ModelState &model, const StepBatch &batch, const LossWeights &weights,
                     LossTerm term = LossTerm::Total);

// Scalar value only, via the same forward path (for finite differences).
double objective_value(const ModelState &model, const StepBatch &batch, const LossWeights &weights,
                       LossTerm term = LossTerm::Total);

// One experience: prototype refresh, head growth, pseudo-labelling, epoch loop
// with Adam/step decay/early stopping, then the old-model snapshot.
// Throws ExperienceError for an empty labeled stream and NumericalError on a
// non-finite loss.
ExperienceResult train_experience(TrainerState &state, const Experience &exp,
                                  const TrainConfig &cfg, const TrainHooks *hooks = nullptr);

struct RunResult {
  MetricsReport report;
  std::vector<EpochLog> log;
  TrainerState state;
};

// Called after each experience with the state and that experience's logs.
using ExperienceCallback =
    std::function<void(const TrainerState &, const ExperienceResult &)>;

RunResult run_stream(const std::vector<Experience> &stream, const TestSet &test,
                     const TrainConfig &cfg, const StreamConfig &stream_cfg,
                     const TrainHooks *hooks = nullptr,
                     const ExperienceCallback &after_experience = {});

// One JSON object per line.
void write_epoch_log_line(std::ostream &out, const EpochLog &e);

} // namespace cirl
