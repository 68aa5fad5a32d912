#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "d2r/losses.hpp"
#include "d2r/model.hpp"

namespace d2r {

enum class InitMode { zero, uniform_random };

enum class Generator { fgsm, pgd, trades, cag };

inline const char* to_string(Generator g) {
  switch (g) {
    case Generator::fgsm: return "fgsm";
    case Generator::pgd: return "pgd";
    case Generator::trades: return "trades";
    case Generator::cag: return "cag";
  }
  return "?";
}

inline std::optional<Generator> parse_generator(std::string_view name) {
  if (name == "fgsm") return Generator::fgsm;
  if (name == "pgd") return Generator::pgd;
  if (name == "trades") return Generator::trades;
  if (name == "cag") return Generator::cag;
  return std::nullopt;
}

inline const char* to_string(InitMode m) { return m == InitMode::zero ? "zero" : "uniform_random"; }

inline std::optional<InitMode> parse_init_mode(std::string_view name) {
  if (name == "zero") return InitMode::zero;
  if (name == "uniform_random" || name == "uniform") return InitMode::uniform_random;
  return std::nullopt;
}

/// L∞ threat model and sign-gradient schedule.
struct AttackConfig {
  double epsilon = 0.031;
  double eta = 0.007;
  int iterations = 10;
  InitMode init = InitMode::uniform_random;
  double low = 0.0;
  double high = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0.0 && eta <= epsilon)) throw Error("attack config requires 0 < eta <= epsilon");
    if (iterations < 1) throw Error("attack config requires at least one iteration");
    if (!(low < high)) throw Error("attack config requires low < high");
  }
};

struct AdvBatch {
  Tensor x_clean;
  Tensor x_adv;
  Generator generator = Generator::pgd;
};

/// Called after every iteration with the 1-based iteration index and the current iterate.
using IterationObserver = std::function<void(int iteration, const Tensor& x_adv)>;

/// Clamp into [x_clean − ε, x_clean + ε] ∩ [low, high], elementwise.
inline Tensor project_linf(const Tensor& x_adv, const Tensor& x_clean, double epsilon, double low, double high) {
  if (x_adv.shape() != x_clean.shape()) throw ShapeError("project_linf: shape mismatch");
  Tensor out = x_adv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(out[i], x_clean[i] - epsilon, x_clean[i] + epsilon);
    out[i] = std::clamp(v, low, high);
  }
  return out;
}

/// sign with sign(0) = 0.
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace detail {

inline void require_finite_gradient(const Tensor& g, const char* who) {
  if (!g.is_finite()) throw NonFiniteError(std::string(who) + ": non-finite input gradient");
}

/// ∇_x CE(f(x), y) with the model parameters held constant.
inline Tensor ce_input_gradient(const ModelState& model, const Tensor& x, std::span<const int> labels) {
  Tape tape;
  const Var xv = tape.leaf(x, true);
  const Var loss = cross_entropy(forward(model, xv, tape), labels);
  Tensor g = tape.backward(loss).of(xv);
  require_finite_gradient(g, "ce gradient");
  return g;
}

/// ∇_x KL(f(x) ‖ softmax(reference_logits)) with the reference held fixed.
inline Tensor kl_input_gradient(const ModelState& model, const Tensor& x, const Tensor& reference_logits) {
  Tape tape;
  const Var xv = tape.leaf(x, true);
  const Var loss = kl_divergence(forward(model, xv, tape), tape.constant(reference_logits));
  Tensor g = tape.backward(loss).of(xv);
  require_finite_gradient(g, "kl gradient");
  return g;
}

inline Tensor initial_point(const Tensor& x, const AttackConfig& config) {
  if (config.init == InitMode::zero) return project_linf(x, x, config.epsilon, config.low, config.high);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> delta(-config.epsilon, config.epsilon);
  Tensor start = x;
  for (double& v : start.data()) v += delta(rng);
  return project_linf(start, x, config.epsilon, config.low, config.high);
}

template <typename GradFn>
Tensor sign_ascent(const Tensor& x, const AttackConfig& config, GradFn&& gradient, const IterationObserver& observer) {
  Tensor current = initial_point(x, config);
  for (int it = 1; it <= config.iterations; ++it) {
    const Tensor g = gradient(current);
    for (std::size_t i = 0; i < current.size(); ++i) current[i] += config.eta * sign(g[i]);
    current = project_linf(current, x, config.epsilon, config.low, config.high);
    if (observer) observer(it, current);
  }
  return current;
}

}  // namespace detail

/// One signed step of size ε on the cross-entropy, from the clean point.
inline AdvBatch fgsm(const ModelState& model, const Tensor& x, std::span<const int> labels,
                     const AttackConfig& config) {
  if (!(config.epsilon >= 0.0) || !(config.low < config.high)) throw Error("fgsm: invalid attack config");
  const Tensor g = detail::ce_input_gradient(model, x, labels);
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += config.epsilon * sign(g[i]);
  return {x, project_linf(adv, x, config.epsilon, config.low, config.high), Generator::fgsm};
}

/// Iterated projected sign-gradient ascent on the cross-entropy.
inline AdvBatch pgd(const ModelState& model, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
                    const IterationObserver& observer = {}) {
  config.validate();
  auto grad = [&](const Tensor& cur) { return detail::ce_input_gradient(model, cur, labels); };
  return {x, detail::sign_ascent(x, config, grad, observer), Generator::pgd};
}

/// Single-model KL generation: ascend KL(f(x') ‖ f(x)) with f(x) fixed.
inline AdvBatch trades_gen(const ModelState& model, const Tensor& x, const AttackConfig& config,
                           const IterationObserver& observer = {}) {
  config.validate();
  const Tensor reference = predict_logits(model, x);
  auto grad = [&](const Tensor& cur) { return detail::kl_input_gradient(model, cur, reference); };
  return {x, detail::sign_ascent(x, config, grad, observer), Generator::trades};
}

/// Collaborative generation: ascend KL(f_target(x') ‖ f_guide(x)). The guide's
/// clean logits do not depend on x' and are computed once per batch.
inline AdvBatch cag_gen(const ModelState& guide, const ModelState& target, const Tensor& x,
                        const AttackConfig& config, const IterationObserver& observer = {}) {
  config.validate();
  if (guide.spec.input_dim() != target.spec.input_dim() || guide.spec.class_count() != target.spec.class_count()) {
    throw ShapeError("cag_gen: guide and target disagree on input or class dimensions");
  }
  const Tensor reference = predict_logits(guide, x);
  auto grad = [&](const Tensor& cur) { return detail::kl_input_gradient(target, cur, reference); };
  return {x, detail::sign_ascent(x, config, grad, observer), Generator::cag};
}

/// Dispatches to a generator. `guide` is only consulted for CAG.
inline AdvBatch generate(Generator generator, const ModelState* guide, const ModelState& target, const Tensor& x,
                         std::span<const int> labels, const AttackConfig& config) {
  switch (generator) {
    case Generator::fgsm: return fgsm(target, x, labels, config);
    case Generator::pgd: return pgd(target, x, labels, config);
    case Generator::trades: return trades_gen(target, x, config);
    case Generator::cag:
      if (!guide) throw Error("cag generation requires a guide model");
      return cag_gen(*guide, target, x, config);
  }
  throw Error("unknown generator");
}

/// KL(f_target(x_adv) ‖ f_guide(x_clean)) as a plain number.
inline double cag_objective(const ModelState& guide, const ModelState& target, const Tensor& x_clean,
                            const Tensor& x_adv) {
  Tape tape;
  const Var t = forward(target, tape.constant(x_adv), tape);
  const Var g = tape.constant(predict_logits(guide, x_clean));
  return kl_divergence(t, g).value().item();
}

}  // namespace d2r
