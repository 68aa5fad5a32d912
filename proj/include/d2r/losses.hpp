#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "d2r/autodiff.hpp"

namespace d2r {

/// Scalar knobs of the dual-regularization objective.
struct LossWeights {
  double lambda = 1.0;  // guide cross-entropy
  double alpha = 30.0;  // KL(guide clean ‖ target adversarial)
  double beta = 20.0;   // |KL(t‖g) − KL(g‖t)| on clean inputs

  void validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(lambda)) throw Error("loss weight lambda must be finite and non-negative");
    if (!ok(alpha)) throw Error("loss weight alpha must be finite and non-negative");
    if (!ok(beta)) throw Error("loss weight beta must be finite and non-negative");
  }
};

enum class GapSign { negative = -1, zero = 0, positive = 1 };

inline const char* to_string(GapSign s) {
  switch (s) {
    case GapSign::negative: return "negative";
    case GapSign::zero: return "zero";
    case GapSign::positive: return "positive";
  }
  return "?";
}

struct LossBreakdown {
  double ce = 0.0;
  double mse = 0.0;
  double kl_adv = 0.0;
  double skl_gap = 0.0;
  double total = 0.0;
  GapSign gap_sign = GapSign::zero;
};

/// Differentiable objective plus its scalar components.
struct LossTerms {
  Var total;
  LossBreakdown breakdown;
};

struct GapTerm {
  Var value;
  GapSign sign = GapSign::zero;
};

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw ShapeError(std::string(op) + ": expected B x K logits");
}

inline void log_softmax_row(std::span<const double> z, std::span<double> out) {
  double mx = -INFINITY;
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double log_s = std::log(s);
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = (z[j] - mx) - log_s;
}

}  // namespace detail

/// Mean over the batch of −log softmax(logits)[label].
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  detail::require_matrix(logits, "cross_entropy");
  return neg(mean(pick(log_softmax(logits, 1), labels)));
}

/// Mean squared difference over all B·K logit entries.
inline Var mse_logits(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mse_logits");
  return mean(square(sub(a, b)));
}

/// Batch mean of KL(softmax(p_logits) ‖ softmax(q_logits)), evaluated in
/// log space. Gradients reach both arguments:
///   ∂/∂p_k = p_k·((log p_k − log q_k) − KL_row),   ∂/∂q_k = q_k − p_k.
/// Both vanish exactly where the two rows are identical.
inline Var kl_divergence(const Var& p_logits, const Var& q_logits) {
  detail::require_matrix(p_logits, "kl_divergence");
  detail::require_same_shape(p_logits, q_logits, "kl_divergence");
  const Tensor& a = p_logits.value();
  const Tensor& b = q_logits.value();
  const std::size_t rows = a.rows(), cols = a.cols();

  std::vector<double> lp(a.size()), lq(b.size()), row_kl(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * cols;
    detail::log_softmax_row(a.data().subspan(off, cols), std::span(lp).subspan(off, cols));
    detail::log_softmax_row(b.data().subspan(off, cols), std::span(lq).subspan(off, cols));
    double kl = 0.0;
    for (std::size_t k = 0; k < cols; ++k) kl += std::exp(lp[off + k]) * (lp[off + k] - lq[off + k]);
    row_kl[r] = kl;
    total += kl;
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return p_logits.tape()->record(
      "kl_divergence", {p_logits, q_logits}, Tensor::scalar(total * inv_rows),
      [lp = std::move(lp), lq = std::move(lq), row_kl = std::move(row_kl), rows, cols, inv_rows](
          const Tensor& g, std::span<Tensor* const> grads) {
        const double up = g[0] * inv_rows;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k = 0; k < cols; ++k) {
            const std::size_t i = r * cols + k;
            const double p = std::exp(lp[i]);
            if (grads[0]) (*grads[0])[i] += up * p * ((lp[i] - lq[i]) - row_kl[r]);
            if (grads[1]) (*grads[1])[i] += up * (std::exp(lq[i]) - p);
          }
        }
      });
}

/// |KL(t ‖ g) − KL(g ‖ t)| together with the sign of the difference taken in
/// that order. The subgradient of |·| at 0 is 0.
inline GapTerm symmetric_kl_gap(const Var& t_logits, const Var& g_logits) {
  detail::require_same_shape(t_logits, g_logits, "symmetric_kl_gap");
  const Var diff = sub(kl_divergence(t_logits, g_logits), kl_divergence(g_logits, t_logits));
  const double d = diff.value().item();
  const GapSign sign = d > 0.0 ? GapSign::positive : (d < 0.0 ? GapSign::negative : GapSign::zero);
  return {abs(diff), sign};
}

/// CE(g_clean, y) + MSE(g_clean, t_adv) + α·KL(g_clean ‖ t_adv).
/// The cross-entropy term is unweighted here; λ only enters the full objective.
inline LossTerms adg_loss(const Var& g_clean, const Var& t_adv, std::span<const int> labels,
                          const LossWeights& weights) {
  weights.validate();
  const Var ce = cross_entropy(g_clean, labels);
  const Var mse = mse_logits(g_clean, t_adv);
  const Var kl = kl_divergence(g_clean, t_adv);
  const Var total = add(add(ce, mse), scale(kl, weights.alpha));

  LossBreakdown b;
  b.ce = ce.value().item();
  b.mse = mse.value().item();
  b.kl_adv = kl.value().item();
  b.total = total.value().item();
  return {total, b};
}

/// λ·CE(g_clean, y) + MSE(g_clean, t_adv) + α·KL(g_clean ‖ t_adv)
///   + β·|KL(t_clean ‖ g_clean) − KL(g_clean ‖ t_clean)|.
inline LossTerms d2r_loss(const Var& g_clean, const Var& t_clean, const Var& t_adv, std::span<const int> labels,
                          const LossWeights& weights) {
  weights.validate();
  detail::require_same_shape(g_clean, t_clean, "d2r_loss");
  const Var ce = cross_entropy(g_clean, labels);
  const Var mse = mse_logits(g_clean, t_adv);
  const Var kl = kl_divergence(g_clean, t_adv);
  const GapTerm gap = symmetric_kl_gap(t_clean, g_clean);
  const Var total =
      add(add(add(scale(ce, weights.lambda), mse), scale(kl, weights.alpha)), scale(gap.value, weights.beta));

  LossBreakdown b;
  b.ce = ce.value().item();
  b.mse = mse.value().item();
  b.kl_adv = kl.value().item();
  b.skl_gap = gap.value.value().item();
  b.total = total.value().item();
  b.gap_sign = gap.sign;
  return {total, b};
}

}  // namespace d2r
