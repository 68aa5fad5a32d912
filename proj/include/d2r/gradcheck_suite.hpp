#pragma once

#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "d2r/gradcheck.hpp"
#include "d2r/losses.hpp"
#include "d2r/model.hpp"

namespace d2r {

/// A named gradient check: a scalar graph and the point to check it at.
struct NamedCheck {
  std::string name;
  ScalarGraph graph;
  std::vector<Tensor> params;
};

namespace detail {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

/// Values bounded away from zero, for rules with a kink at the origin.
inline Tensor random_away_from_zero(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution neg(0.5);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = neg(rng) ? -mag(rng) : mag(rng);
  return Tensor(std::move(shape), std::move(v));
}

/// A fixed random weighting turns any tensor output into a scalar whose
/// gradient exercises every output element.
inline Var weighted_sum(const Var& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(v, v.tape()->constant(random_tensor(rng, v.shape()))));
}

}  // namespace detail

/// Every differentiable primitive, every loss, and the composed dual objective
/// through a pair of toy models, at fixed seeded points.
inline std::vector<NamedCheck> gradient_check_suite() {
  std::mt19937_64 rng(20240611);
  using detail::random_away_from_zero;
  using detail::random_tensor;
  using detail::weighted_sum;
  std::vector<NamedCheck> checks;
  const std::vector<int> labels{0, 2, 1, 2};

  checks.push_back({"add", [](Tape&, std::span<const Var> p) { return weighted_sum(add(p[0], p[1]), 1); },
                    {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})}});
  checks.push_back({"add_broadcast", [](Tape&, std::span<const Var> p) { return weighted_sum(add(p[0], p[1]), 2); },
                    {random_tensor(rng, {3, 4}), random_tensor(rng, {4})}});
  checks.push_back({"sub", [](Tape&, std::span<const Var> p) { return weighted_sum(sub(p[0], p[1]), 3); },
                    {random_tensor(rng, {3, 4}), random_tensor(rng, {1, 4})}});
  checks.push_back({"mul", [](Tape&, std::span<const Var> p) { return weighted_sum(mul(p[0], p[1]), 4); },
                    {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 1})}});
  checks.push_back({"scale", [](Tape&, std::span<const Var> p) { return weighted_sum(scale(p[0], -2.5), 5); },
                    {random_tensor(rng, {2, 3})}});
  checks.push_back({"square", [](Tape&, std::span<const Var> p) { return weighted_sum(square(p[0]), 6); },
                    {random_tensor(rng, {2, 3})}});
  checks.push_back({"exp", [](Tape&, std::span<const Var> p) { return weighted_sum(exp(p[0]), 7); },
                    {random_tensor(rng, {2, 3})}});
  checks.push_back({"relu", [](Tape&, std::span<const Var> p) { return weighted_sum(relu(p[0]), 8); },
                    {random_away_from_zero(rng, {3, 4})}});
  checks.push_back({"abs", [](Tape&, std::span<const Var> p) { return weighted_sum(abs(p[0]), 9); },
                    {random_away_from_zero(rng, {3, 4})}});
  checks.push_back({"matmul", [](Tape&, std::span<const Var> p) { return weighted_sum(matmul(p[0], p[1]), 10); },
                    {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})}});
  checks.push_back({"sum_mean", [](Tape&, std::span<const Var> p) { return add(sum(p[0]), scale(mean(square(p[0])), 3.0)); },
                    {random_tensor(rng, {3, 4})}});
  checks.push_back({"log_softmax_axis1",
                    [](Tape&, std::span<const Var> p) { return weighted_sum(log_softmax(p[0], 1), 11); },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"log_softmax_axis0",
                    [](Tape&, std::span<const Var> p) { return weighted_sum(log_softmax(p[0], 0), 12); },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"pick", [labels](Tape&, std::span<const Var> p) { return weighted_sum(pick(p[0], labels), 13); },
                    {random_tensor(rng, {4, 3})}});
  checks.push_back({"cross_entropy",
                    [labels](Tape&, std::span<const Var> p) { return cross_entropy(p[0], labels); },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"mse_logits", [](Tape&, std::span<const Var> p) { return mse_logits(p[0], p[1]); },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0), random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"kl_divergence", [](Tape&, std::span<const Var> p) { return kl_divergence(p[0], p[1]); },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0), random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"symmetric_kl_gap",
                    [](Tape&, std::span<const Var> p) { return symmetric_kl_gap(p[0], p[1]).value; },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0), random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"adg_loss",
                    [labels](Tape&, std::span<const Var> p) {
                      return adg_loss(p[0], p[1], labels, {1.0, 30.0, 20.0}).total;
                    },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0), random_tensor(rng, {4, 3}, -3.0, 3.0)}});
  checks.push_back({"d2r_loss",
                    [labels](Tape&, std::span<const Var> p) {
                      return d2r_loss(p[0], p[1], p[2], labels, {1.0, 30.0, 20.0}).total;
                    },
                    {random_tensor(rng, {4, 3}, -3.0, 3.0), random_tensor(rng, {4, 3}, -3.0, 3.0),
                     random_tensor(rng, {4, 3}, -3.0, 3.0)}});

  // Composed objective through a 2-class guide/target pair, checked with
  // respect to every parameter of both models.
  {
    const ModelSpec guide_spec{{3, 4, 2}, Activation::relu, 101};
    const ModelSpec target_spec{{3, 5, 4, 2}, Activation::relu, 102};
    const ModelState guide = init_model(guide_spec, Role::guide);
    const ModelState target = init_model(target_spec, Role::target);
    const Tensor x = random_tensor(rng, {4, 3}, 0.0, 1.0);
    const Tensor x_adv = random_tensor(rng, {4, 3}, 0.0, 1.0);
    const std::vector<int> y{0, 1, 1, 0};
    std::vector<Tensor> params;
    for (const Tensor* p : guide.parameters()) params.push_back(*p);
    for (const Tensor* p : target.parameters()) params.push_back(*p);
    const std::size_t guide_count = guide.parameters().size();
    // Biases start at zero; nudge them so no hidden unit sits at the ReLU kink.
    for (auto& p : params) {
      if (p.rank() == 1) p = random_tensor(rng, p.shape(), -0.1, 0.1);
    }
    checks.push_back({"d2r_model_pair",
                      [guide_spec, target_spec, x, x_adv, y, guide_count](Tape& tape, std::span<const Var> p) {
                        const BoundModel g{&guide_spec, {p.begin(), p.begin() + guide_count}};
                        const BoundModel t{&target_spec, {p.begin() + guide_count, p.end()}};
                        const Var xc = tape.constant(x);
                        const Var xa = tape.constant(x_adv);
                        return d2r_loss(forward(g, xc), forward(t, xc), forward(t, xa), y, {1.0, 30.0, 20.0}).total;
                      },
                      params});
  }
  return checks;
}

struct SuiteResult {
  bool pass = true;
  double worst_rel_error = 0.0;
  std::vector<std::string> failed;
};

/// Runs the suite and prints one line per check.
inline SuiteResult run_gradient_checks(std::ostream& out, const std::string& fault_op = {}, double tol = 1e-4) {
  SuiteResult result;
  GradCheckOptions options;
  options.tol = tol;
  options.fault_op = fault_op;
  for (const auto& check : gradient_check_suite()) {
    const GradCheckReport report = finite_diff_check(check.graph, check.params, options);
    out << std::left << std::setw(20) << check.name << " worst_rel_err=" << std::scientific << std::setprecision(3)
        << report.worst_rel_error << std::defaultfloat << " checked=" << report.checked
        << " excluded=" << report.excluded << (report.pass ? "  PASS" : "  FAIL") << '\n';
    result.worst_rel_error = std::max(result.worst_rel_error, report.worst_rel_error);
    if (!report.pass) {
      result.pass = false;
      result.failed.push_back(check.name);
    }
  }
  return result;
}

}  // namespace d2r
