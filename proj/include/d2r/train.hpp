#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "d2r/attacks.hpp"
#include "d2r/data.hpp"
#include "d2r/evaluate.hpp"
#include "d2r/losses.hpp"
#include "d2r/model.hpp"

namespace d2r {

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// d2r co-trains guide and target on the dual-regularization objective;
/// pgd_at trains the target alone on cross-entropy of adversarial inputs.
enum class Objective { d2r, pgd_at };

inline const char* to_string(Objective o) { return o == Objective::d2r ? "d2r" : "pgd_at"; }

inline std::optional<Objective> parse_objective(std::string_view s) {
  if (s == "d2r") return Objective::d2r;
  if (s == "pgd_at") return Objective::pgd_at;
  return std::nullopt;
}

/// From `epoch` on, the learning rate is additionally multiplied by `multiplier`.
struct LrMilestone {
  std::size_t epoch = 0;
  double multiplier = 1.0;

  friend bool operator==(const LrMilestone&, const LrMilestone&) = default;
};

/// ×0.1 at half and at three quarters of the run.
inline std::vector<LrMilestone> default_lr_schedule(std::size_t epochs) {
  std::vector<LrMilestone> out;
  const std::size_t half = epochs / 2, three_quarters = 3 * epochs / 4;
  if (half > 0) out.push_back({half, 0.1});
  if (three_quarters > half) out.push_back({three_quarters, 0.1});
  return out;
}

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  std::vector<LrMilestone> lr_schedule;
  LossWeights weights;
  AttackConfig attack;
  Generator generator = Generator::cag;
  Objective objective = Objective::d2r;
  std::uint64_t seed = 0;
  /// Iterations of the per-epoch PGD robustness evaluation.
  int eval_iterations = 20;

  void validate(std::size_t dataset_size) const {
    if (batch_size == 0) throw Error("batch_size must be positive");
    if (batch_size > dataset_size) throw Error("batch_size exceeds the training set size");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("lr must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
    for (std::size_t i = 1; i < lr_schedule.size(); ++i) {
      if (lr_schedule[i].epoch <= lr_schedule[i - 1].epoch) throw Error("lr_schedule epochs must be strictly increasing");
    }
    if (generator == Generator::fgsm) throw Error("training generator must be pgd, trades or cag");
    if (eval_iterations < 1) throw Error("eval_iterations must be positive");
    weights.validate();
    attack.validate();
  }

  double lr_at(std::size_t epoch) const {
    double out = lr;
    for (const auto& m : lr_schedule) {
      if (epoch >= m.epoch) out *= m.multiplier;
    }
    return out;
  }
};

/// v ← momentum·v + g;  p ← p − lr·v.
inline void sgd_momentum_update(std::span<Tensor* const> params, std::span<const Tensor> grads,
                                std::span<Tensor> velocity, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_momentum_update: parameter, gradient and velocity counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& v = velocity[i];
    const Tensor& g = grads[i];
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw ShapeError("sgd_momentum_update: shape mismatch at parameter " + std::to_string(i));
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

/// A model together with its optimizer velocity.
struct Trainee {
  ModelState model;
  std::vector<Tensor> velocity;

  explicit Trainee(ModelState state) : model(std::move(state)) {
    for (const Tensor* p : model.parameters()) velocity.push_back(Tensor::zeros(p->shape()));
  }

  void apply(const std::vector<Tensor>& grads, double lr, double momentum) {
    auto params = model.parameters();
    sgd_momentum_update(params, grads, velocity, lr, momentum);
  }
};

namespace detail {

inline std::vector<Tensor> gradients_of(const Gradients& grads, const BoundModel& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.params.size());
  for (const Var& p : bound.params) out.push_back(grads.of(p));
  return out;
}

inline std::uint64_t step_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch) {
  std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ULL;
  h ^= (static_cast<std::uint64_t>(epoch) << 32 | static_cast<std::uint64_t>(batch)) * 0xBF58476D1CE4E5B9ULL;
  h ^= h >> 31;
  return h * 0x94D049BB133111EBULL;
}

}  // namespace detail

/// One optimisation step on a batch. Adversarial inputs are generated from the
/// current states; the guide only ever sees clean inputs. Returns the loss
/// measured before the update.
inline LossBreakdown train_step(Trainee& guide, Trainee& target, const Tensor& x, std::span<const int> labels,
                                const TrainConfig& config, double lr, std::uint64_t attack_seed) {
  if (labels.empty()) throw Error("train_step: empty batch");
  AttackConfig attack = config.attack;
  attack.seed = attack_seed;
  const Tensor x_adv = generate(config.generator, &guide.model, target.model, x, labels, attack).x_adv;

  Tape tape;
  try {
    const Var xc = tape.constant(x);
    const Var xa = tape.constant(x_adv);
    if (config.objective == Objective::pgd_at) {
      const BoundModel tb = bind(tape, target.model, true);
      const Var ce = cross_entropy(forward(tb, xa), labels);
      const Gradients grads = tape.backward(ce);
      LossBreakdown b;
      b.ce = b.total = ce.value().item();
      target.apply(detail::gradients_of(grads, tb), lr, config.momentum);
      return b;
    }
    const BoundModel gb = bind(tape, guide.model, true);
    const BoundModel tb = bind(tape, target.model, true);
    const Var g_clean = forward(gb, xc);
    const Var t_clean = forward(tb, xc);
    const Var t_adv = forward(tb, xa);
    const LossTerms terms = d2r_loss(g_clean, t_clean, t_adv, labels, config.weights);
    const Gradients grads = tape.backward(terms.total);
    guide.apply(detail::gradients_of(grads, gb), lr, config.momentum);
    target.apply(detail::gradients_of(grads, tb), lr, config.momentum);
    return terms.breakdown;
  } catch (const NonFiniteError& e) {
    throw TrainingError(std::string("non-finite loss in training step, aborting: ") + e.what());
  }
}

struct ModelAccuracy {
  double clean = 0.0;
  double robust = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown mean_loss;
  std::size_t steps = 0;
  std::size_t positive_gap_steps = 0;
  std::size_t negative_gap_steps = 0;
  double gap_sign_positive_fraction = 0.0;
  ModelAccuracy guide;
  ModelAccuracy target;

  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    auto tie = [](const EpochRecord& r) {
      return std::tie(r.epoch, r.lr, r.mean_loss.ce, r.mean_loss.mse, r.mean_loss.kl_adv, r.mean_loss.skl_gap,
                      r.mean_loss.total, r.mean_loss.gap_sign, r.steps, r.positive_gap_steps, r.negative_gap_steps,
                      r.gap_sign_positive_fraction, r.guide.clean, r.guide.robust, r.target.clean, r.target.robust);
    };
    return tie(a) == tie(b);
  }
};

struct TrainResult {
  ModelState guide;
  ModelState target;
  ModelState best_guide;
  ModelState best_target;
  std::optional<std::size_t> best_epoch;
  std::vector<EpochRecord> records;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// The per-epoch robustness attack used by train().
inline EvalAttack epoch_eval_attack(const TrainConfig& config) {
  EvalAttack a = pgd20(config.attack, config.seed ^ 0xE7A1ULL);
  a.config.iterations = config.eval_iterations;
  return a;
}

/// Full training loop: seeded shuffling, learning-rate schedule, per-epoch
/// clean and PGD evaluation of both models on the test split, and tracking of
/// the states with the best target robust accuracy.
inline TrainResult train(const ModelSpec& guide_spec, const ModelSpec& target_spec, const DataSplit& data,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  for (const ModelSpec* spec : {&guide_spec, &target_spec}) {
    spec->validate();
    if (spec->input_dim() != data.train.dim() || spec->class_count() != data.train.class_count) {
      throw ShapeError("model widths do not match the dataset (input " + std::to_string(data.train.dim()) +
                       ", classes " + std::to_string(data.train.class_count) + ")");
    }
  }
  config.validate(data.train.size());

  Trainee guide(init_model(guide_spec, Role::guide));
  Trainee target(init_model(target_spec, Role::target));
  TrainResult result{guide.model, target.model, guide.model, target.model, std::nullopt, {}};

  const EvalAttack eval_attack = epoch_eval_attack(config);
  BatchIterator batches(data.train.size(), config.batch_size, config.seed);
  double best_robust = -1.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = config.lr_at(epoch);
    const auto plan = batches.next_epoch();
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const Dataset batch = data.train.subset(plan[b]);
      const LossBreakdown loss = train_step(guide, target, batch.x, batch.y, config, rec.lr,
                                            detail::step_seed(config.seed, epoch, b));
      rec.mean_loss.ce += loss.ce;
      rec.mean_loss.mse += loss.mse;
      rec.mean_loss.kl_adv += loss.kl_adv;
      rec.mean_loss.skl_gap += loss.skl_gap;
      rec.mean_loss.total += loss.total;
      ++rec.steps;
      if (loss.gap_sign == GapSign::positive) ++rec.positive_gap_steps;
      if (loss.gap_sign == GapSign::negative) ++rec.negative_gap_steps;
    }
    const double steps = static_cast<double>(rec.steps);
    rec.mean_loss.ce /= steps;
    rec.mean_loss.mse /= steps;
    rec.mean_loss.kl_adv /= steps;
    rec.mean_loss.skl_gap /= steps;
    rec.mean_loss.total /= steps;
    rec.mean_loss.gap_sign = rec.positive_gap_steps > rec.negative_gap_steps   ? GapSign::positive
                             : rec.positive_gap_steps < rec.negative_gap_steps ? GapSign::negative
                                                                               : GapSign::zero;
    rec.gap_sign_positive_fraction = static_cast<double>(rec.positive_gap_steps) / steps;

    rec.guide = {evaluate(guide.model, data.test, std::nullopt), evaluate(guide.model, data.test, eval_attack)};
    rec.target = {evaluate(target.model, data.test, std::nullopt), evaluate(target.model, data.test, eval_attack)};
    if (rec.target.robust > best_robust) {
      best_robust = rec.target.robust;
      result.best_epoch = epoch;
      result.best_guide = guide.model;
      result.best_target = target.model;
    }
    result.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.guide = guide.model;
  result.target = target.model;
  return result;
}

}  // namespace d2r
