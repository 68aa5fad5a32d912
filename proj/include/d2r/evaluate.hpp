#pragma once

#include <optional>
#include <string>
#include <vector>

#include "d2r/attacks.hpp"
#include "d2r/data.hpp"

namespace d2r {

/// A white-box attack run against the model being evaluated.
struct EvalAttack {
  Generator generator = Generator::pgd;
  AttackConfig config;

  /// Metric suffix, e.g. "pgd20" or "fgsm".
  std::string name() const {
    if (generator == Generator::fgsm) return "fgsm";
    return std::string(to_string(generator)) + std::to_string(config.iterations);
  }
};

/// PGD-20 at the training radius and step.
inline EvalAttack pgd20(const AttackConfig& train_attack, std::uint64_t seed) {
  AttackConfig c = train_attack;
  c.iterations = 20;
  c.init = InitMode::uniform_random;
  c.seed = seed;
  return {Generator::pgd, c};
}

inline std::size_t count_correct(const ModelState& model, const Tensor& x, std::span<const int> y) {
  const auto predicted = argmax_rows(predict_logits(model, x));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == y[i] ? 1 : 0;
  return correct;
}

/// Fraction of argmax-correct predictions, on clean inputs or on inputs
/// attacked against `model` itself. Batch b uses attack seed config.seed + b.
inline double evaluate(const ModelState& model, const Dataset& data, const std::optional<EvalAttack>& attack,
                       std::size_t batch_size = 500) {
  if (data.dim() != model.spec.input_dim()) {
    throw ShapeError("evaluate: dataset width " + std::to_string(data.dim()) + " does not match model input width " +
                     std::to_string(model.spec.input_dim()));
  }
  if (data.size() == 0) throw Error("evaluate: empty dataset");
  if (attack && attack->generator == Generator::cag) throw Error("evaluate: cag needs a guide and is not an evaluation attack");
  std::size_t correct = 0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size, ++batch_index) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    const Tensor x = data.x.rows_slice(start, end);
    const std::span<const int> y(data.y.data() + start, end - start);
    if (!attack) {
      correct += count_correct(model, x, y);
      continue;
    }
    AttackConfig c = attack->config;
    c.seed = attack->config.seed + batch_index;
    correct += count_correct(model, generate(attack->generator, nullptr, model, x, y, c).x_adv, y);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace d2r
