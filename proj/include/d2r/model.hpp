#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "d2r/autodiff.hpp"

namespace d2r {

enum class Activation : std::uint8_t { relu = 0 };

enum class Role : std::uint8_t { guide = 0, target = 1 };

inline const char* to_string(Role r) { return r == Role::guide ? "guide" : "target"; }

/// Fully connected classifier description: widths run from the input
/// dimension to the class count.
struct ModelSpec {
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;

  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t class_count() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }

  void validate() const {
    if (layer_widths.size() < 2) throw Error("model spec needs at least an input and an output width");
    for (std::size_t w : layer_widths) {
      if (w == 0) throw Error("model spec widths must be positive");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Learnable parameters of one model. Layer l maps width l to width l+1
/// through weights (in × out) and a bias of length out.
struct ModelState {
  ModelSpec spec;
  Role role = Role::target;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  /// Parameters in the fixed order W0, b0, W1, b1, ...
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* p : parameters()) n += p->size();
    return n;
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// He initialisation: weights ~ Normal(0, 2 / fan_in), zero biases.
inline ModelState init_model(const ModelSpec& spec, Role role) {
  spec.validate();
  ModelState state{spec, role, {}, {}};
  std::mt19937_64 rng(spec.init_seed);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_in = spec.layer_widths[l];
    const std::size_t fan_out = spec.layer_widths[l + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = normal(rng);
    state.weights.emplace_back(Shape{fan_in, fan_out}, std::move(w));
    state.biases.push_back(Tensor::zeros({fan_out}));
  }
  return state;
}

/// A model's parameters recorded as leaves on a tape.
struct BoundModel {
  const ModelSpec* spec = nullptr;
  std::vector<Var> params;  // W0, b0, W1, b1, ...
};

inline BoundModel bind(Tape& tape, const ModelState& state, bool requires_grad) {
  BoundModel bound{&state.spec, {}};
  for (const Tensor* p : state.parameters()) bound.params.push_back(tape.leaf(*p, requires_grad));
  return bound;
}

/// Logits: affine layers with ReLU between them and none after the last.
inline Var forward(const BoundModel& model, const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != model.spec->input_dim()) {
    throw ShapeError("forward: input shape " + shape_string(xv.shape()) + " does not match model input width " +
                     std::to_string(model.spec->input_dim()));
  }
  Var h = x;
  const std::size_t layers = model.params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = add(matmul(h, model.params[2 * l]), model.params[2 * l + 1]);
    if (l + 1 < layers) h = relu(h);
  }
  return h;
}

/// Forward with the parameters held constant on `tape`.
inline Var forward(const ModelState& state, const Var& x, Tape& tape) {
  return forward(bind(tape, state, false), x);
}

inline Tensor predict_logits(const ModelState& state, const Tensor& x) {
  Tape tape;
  return forward(state, tape.constant(x), tape).value();
}

}  // namespace d2r
