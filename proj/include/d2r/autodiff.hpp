#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "d2r/tensor.hpp"

namespace d2r {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid for the lifetime
/// of the owning tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates the gradient contribution of one node into its inputs.
/// input_grads[i] is null when input i does not require a gradient.
using BackwardRule = std::function<void(const Tensor& upstream, std::span<Tensor* const> input_grads)>;

struct TapeNode {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool requires_grad = false;
  BackwardRule backward;
};

/// Result of a backward pass: one optional gradient per tape node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Gradient with respect to v; zeros of v's shape when v is disconnected.
  Tensor of(const Var& v) const {
    const auto& g = grads_.at(v.id());
    return g ? *g : Tensor::zeros(shapes_.at(v.id()));
  }

  bool has(const Var& v) const { return grads_.at(v.id()).has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

/// Append-only record of a forward computation. Nodes are created in
/// evaluation order, so the node list is already topologically sorted.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    return push(TapeNode{"leaf", {}, std::move(value), requires_grad, {}});
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an operation output. The node requires a gradient iff any input does.
  Var record(std::string op, std::span<const Var> inputs, Tensor value, BackwardRule rule) {
    TapeNode node{std::move(op), {}, std::move(value), false, std::move(rule)};
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw Error("operation '" + node.op + "' received a value from another tape");
      node.inputs.push_back(in.id_);
      node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
    }
    return push(std::move(node));
  }

  Var record(std::string op, std::initializer_list<Var> inputs, Tensor value, BackwardRule rule) {
    return record(std::move(op), std::span<const Var>(inputs.begin(), inputs.size()), std::move(value),
                  std::move(rule));
  }

  /// Reverse sweep from a single-element loss. Each node is visited once.
  Gradients backward(const Var& loss) const {
    if (loss.tape_ != this) throw Error("backward called with a value from another tape");
    if (nodes_[loss.id_].value.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_string(nodes_[loss.id_].value.shape()));
    }
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[loss.id_] = Tensor::full(nodes_[loss.id_].value.shape(), 1.0);

    std::vector<Tensor*> slots;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
      const TapeNode& node = nodes_[id];
      if (!grads[id] || !node.requires_grad || !node.backward) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const std::size_t in = node.inputs[i];
        if (!nodes_[in].requires_grad) continue;
        if (!grads[in]) grads[in] = Tensor::zeros(nodes_[in].value.shape());
        slots[i] = &*grads[in];
      }
      if (node.op == fault_op_) {
        Tensor corrupted = *grads[id];
        for (double& g : corrupted.data()) g *= 1.5;
        node.backward(corrupted, slots);
      } else {
        node.backward(*grads[id], slots);
      }
    }

    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.value.shape());
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].requires_grad) grads[id].reset();
    }
    return Gradients(std::move(grads), std::move(shapes));
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }

  /// Test hook: scales the upstream gradient of every node of the named
  /// operation kind by 1.5, so gradient checks can prove they detect a bad rule.
  void inject_fault(std::string op) { fault_op_ = std::move(op); }

 private:
  friend class Var;

  Var push(TapeNode node) {
    if (!node.value.is_finite()) throw NonFiniteError("operation '" + node.op + "' produced a non-finite value");
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  std::deque<TapeNode> nodes_;  // stable addresses: Var::value() hands out references
  std::string fault_op_;
};

inline const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }
inline bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

namespace detail {

/// Right-aligned broadcast where any extent of 1 stretches to the other operand's extent.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                       " are not broadcastable");
    }
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

/// For every element of `out`, the flat index into an operand of shape `in`.
inline std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    stride[i + offset] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t total = shape_size(out);
  std::vector<std::size_t> index(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t n = 0; n < total; ++n) {
    index[n] = flat;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      flat += stride[ax];
      if (counter[ax] < out[ax]) break;
      flat -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return index;
}

/// Shared machinery for binary elementwise operations with broadcasting.
/// `fn(x, y)` computes the output; `dx(x, y)` and `dy(x, y)` are the partials.
template <typename Fn, typename Dx, typename Dy>
Var elementwise_binary(const char* op, const Var& a, const Var& b, Fn fn, Dx dx, Dy dy) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape(), op);
  const std::size_t n = shape_size(out_shape);
  const bool same_a = av.shape() == out_shape;
  const bool same_b = bv.shape() == out_shape;
  std::vector<std::size_t> ia = same_a ? std::vector<std::size_t>{} : broadcast_index(av.shape(), out_shape);
  std::vector<std::size_t> ib = same_b ? std::vector<std::size_t>{} : broadcast_index(bv.shape(), out_shape);

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fn(av[same_a ? i : ia[i]], bv[same_b ? i : ib[i]]);
  }
  Tensor a_val = av;
  Tensor b_val = bv;
  return a.tape()->record(
      op, {a, b}, Tensor(out_shape, std::move(out)),
      [a_val = std::move(a_val), b_val = std::move(b_val), ia = std::move(ia), ib = std::move(ib), same_a, same_b,
       dx, dy](const Tensor& g, std::span<Tensor* const> grads) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ja = same_a ? i : ia[i];
          const std::size_t jb = same_b ? i : ib[i];
          if (grads[0]) (*grads[0])[ja] += g[i] * dx(a_val[ja], b_val[jb]);
          if (grads[1]) (*grads[1])[jb] += g[i] * dy(a_val[ja], b_val[jb]);
        }
      });
}

template <typename Fn, typename Df>
Var elementwise_unary(const char* op, const Var& a, Fn fn, Df df) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i]);
  return a.tape()->record(op, {a}, Tensor(av.shape(), std::move(out)),
                          [a_val = av, df](const Tensor& g, std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * df(a_val[i]);
                          });
}

/// c += a(m×k) · b(k×n)
inline void gemm_accumulate(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(const Var& a, double factor) {
  return detail::elementwise_unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var square(const Var& a) {
  return detail::elementwise_unary(
      "square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

inline Var exp(const Var& a) {
  return detail::elementwise_unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

/// max(0, x); the mask is 0 at x == 0.
inline Var relu(const Var& a) {
  return detail::elementwise_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

/// |x| with subgradient 0 at x == 0.
inline Var abs(const Var& a) {
  return detail::elementwise_unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeError("matmul: operands must be matrices");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_accumulate(av.data(), bv.data(), out, m, k, n);
  return a.tape()->record(
      "matmul", {a, b}, Tensor({m, n}, std::move(out)),
      [a_val = av, b_val = bv, m, k, n](const Tensor& g, std::span<Tensor* const> grads) {
        if (grads[0]) {
          // dA = G · Bᵀ
          auto ga = grads[0]->data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b_val[p * n + j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (grads[1]) {
          // dB = Aᵀ · G
          auto gb = grads[1]->data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a_val[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
          }
        }
      });
}

inline Var sum(const Var& a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  return a.tape()->record("sum", {a}, Tensor::scalar(s), [](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    const double up = g[0];
    for (double& x : grads[0]->data()) x += up;
  });
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// z − logsumexp(z) along `axis`, computed with max subtraction.
inline Var log_softmax(const Var& z, std::size_t axis) {
  const Tensor& zv = z.value();
  if (axis >= zv.rank()) throw ShapeError("log_softmax: axis out of range");
  const auto& shape = zv.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  std::vector<double> out(zv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, zv[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += std::exp(zv[base + j * inner] - mx);
      const double log_s = std::log(s);
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = (zv[base + j * inner] - mx) - log_s;
    }
  }
  Tensor result(shape, std::move(out));
  Tensor cached = result;
  return z.tape()->record(
      "log_softmax", {z}, std::move(result),
      [y = std::move(cached), outer, inner, len](const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        // dz_j = g_j − softmax_j · Σ_k g_k
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double gs = 0.0;
            for (std::size_t j = 0; j < len; ++j) gs += g[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              (*grads[0])[idx] += g[idx] - std::exp(y[idx]) * gs;
            }
          }
        }
      });
}

/// Selects m[i, labels[i]] from each row of a matrix.
inline Var pick(const Var& m, std::span<const int> labels) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2) throw ShapeError("pick: expected a matrix");
  const std::size_t rows = mv.rows(), cols = mv.cols();
  if (labels.size() != rows) throw ShapeError("pick: label count does not match row count");
  std::vector<double> out(rows);
  std::vector<std::size_t> flat(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
      throw Error("label " + std::to_string(labels[r]) + " out of range [0, " + std::to_string(cols) + ")");
    }
    flat[r] = r * cols + static_cast<std::size_t>(labels[r]);
    out[r] = mv[flat[r]];
  }
  return m.tape()->record("pick", {m}, Tensor({rows}, std::move(out)),
                          [flat = std::move(flat)](const Tensor& g, std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t r = 0; r < flat.size(); ++r) (*grads[0])[flat[r]] += g[r];
                          });
}

}  // namespace d2r
