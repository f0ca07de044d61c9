#pragma once

// Tape-based reverse mode over the small op set the encoder, adapter and
// losses need. Nodes are appended in evaluation order, so walking the tape
// backwards is a valid topological order. Parameter gradients accumulate into
// Parameter::grad across tapes until zero_grad() is called.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rrra/numkernel/tensor.hpp"

namespace rrra::num {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix<Scalar>::Zero(rows, cols)),
        grad(Matrix<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

/// Handle to a tape node.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

template <typename Scalar>
class Tape {
 public:
  using Vec = Vector<Scalar>;
  using Backward = std::function<void(Tape&, const Vec& out_grad)>;

  Var constant(Vec value) { return push(std::move(value), nullptr); }

  Var scalar(Scalar v) {
    Vec x(1);
    x(0) = v;
    return constant(std::move(x));
  }

  Var push(Vec value, Backward backward) {
    Node n;
    n.grad = Vec::Zero(value.size());
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Vec& value(Var v) const { return nodes_.at(v.id).value; }
  const Vec& grad(Var v) const { return nodes_.at(v.id).grad; }
  Scalar scalar_value(Var v) const { return value(v)(0); }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& delta) {
    nodes_[v.id].grad += delta;
  }

  void accumulate_at(Var v, Eigen::Index i, Scalar delta) { nodes_[v.id].grad(i) += delta; }

  /// Runs the backward pass from a scalar root, seeding d(root)/d(root) = 1.
  void backward(Var root) {
    if (value(root).size() != 1) {
      throw DimensionMismatch("backward root must be scalar, got size " +
                              std::to_string(value(root).size()));
    }
    nodes_[root.id].grad(0) += Scalar(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (!nodes_[i].backward) continue;
      // The backward rule writes only into earlier nodes, never into nodes_[i].
      const Vec& g = nodes_[i].grad;
      nodes_[i].backward(*this, g);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Vec value;
    Vec grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

inline void require_same(Eigen::Index a, Eigen::Index b, const char* op) {
  if (a != b) {
    throw DimensionMismatch(std::string(op) + ": operand shapes [" + std::to_string(a) +
                            "] and [" + std::to_string(b) + "] differ");
  }
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
Scalar sigmoid_value(Scalar x) {
  return detail::stable_sigmoid(x);
}

enum class ElementwiseOp { kAdd, kSub, kMul, kTanh, kRelu, kSigmoid, kScale };

/// W·x with W a parameter. Records dW += g xᵀ and dx += Wᵀ g.
template <typename Scalar>
Var matvec(Tape<Scalar>& tape, Parameter<Scalar>& w, Var x) {
  const auto& xv = tape.value(x);
  if (w.value.cols() != xv.size()) {
    throw DimensionMismatch("matvec: W is " + shape_string(w.value.rows(), w.value.cols()) +
                            ", x is [" + std::to_string(xv.size()) + "]");
  }
  Vector<Scalar> out = matvec_accumulate(w.value, xv);
  return tape.push(std::move(out), [&w, x](Tape<Scalar>& t, const Vector<Scalar>& g) {
    const auto& xv = t.value(x);
    for (Eigen::Index r = 0; r < w.value.rows(); ++r) {
      if (g(r) == Scalar(0)) continue;
      for (Eigen::Index c = 0; c < w.value.cols(); ++c) w.grad(r, c) += g(r) * xv(c);
    }
    Vector<Scalar> dx(w.value.cols());
    for (Eigen::Index c = 0; c < w.value.cols(); ++c) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < w.value.rows(); ++r)
        acc += static_cast<double>(w.value(r, c)) * static_cast<double>(g(r));
      dx(c) = static_cast<Scalar>(acc);
    }
    t.accumulate(x, dx);
  });
}

/// A column parameter as a tape variable; its gradient lands in p.grad.
template <typename Scalar>
Var leaf(Tape<Scalar>& tape, Parameter<Scalar>& p) {
  if (p.value.cols() != 1) throw DimensionMismatch("leaf: parameter " + p.name + " is not a column");
  return tape.push(p.value.col(0), [&p](Tape<Scalar>&, const Vector<Scalar>& g) { p.grad.col(0) += g; });
}

/// x + b for a column parameter b.
template <typename Scalar>
Var add_bias(Tape<Scalar>& tape, Var x, Parameter<Scalar>& b) {
  const auto& xv = tape.value(x);
  if (b.value.cols() != 1 || b.value.rows() != xv.size()) {
    throw DimensionMismatch("add_bias: x is [" + std::to_string(xv.size()) + "], b is " +
                            shape_string(b.value.rows(), b.value.cols()));
  }
  Vector<Scalar> out = xv + b.value.col(0);
  return tape.push(std::move(out), [&b, x](Tape<Scalar>& t, const Vector<Scalar>& g) {
    b.grad.col(0) += g;
    t.accumulate(x, g);
  });
}

template <typename Scalar>
Var elementwise(Tape<Scalar>& tape, ElementwiseOp op, Var a, Var b = {}, Scalar factor = Scalar(1)) {
  using Vec = Vector<Scalar>;
  const Vec& av = tape.value(a);
  switch (op) {
    case ElementwiseOp::kAdd:
    case ElementwiseOp::kSub:
    case ElementwiseOp::kMul: {
      const Vec& bv = tape.value(b);
      detail::require_same(av.size(), bv.size(), "elementwise");
      if (op == ElementwiseOp::kAdd) {
        return tape.push(av + bv, [a, b](Tape<Scalar>& t, const Vec& g) {
          t.accumulate(a, g);
          t.accumulate(b, g);
        });
      }
      if (op == ElementwiseOp::kSub) {
        return tape.push(av - bv, [a, b](Tape<Scalar>& t, const Vec& g) {
          t.accumulate(a, g);
          t.accumulate(b, -g);
        });
      }
      return tape.push(av.cwiseProduct(bv), [a, b](Tape<Scalar>& t, const Vec& g) {
        const Vec da = g.cwiseProduct(t.value(b));
        const Vec db = g.cwiseProduct(t.value(a));
        t.accumulate(a, da);
        t.accumulate(b, db);
      });
    }
    case ElementwiseOp::kTanh: {
      Vec out = av.unaryExpr([](Scalar v) { return std::tanh(v); });
      Vec deriv = out.unaryExpr([](Scalar y) { return Scalar(1) - y * y; });
      return tape.push(std::move(out), [a, deriv](Tape<Scalar>& t, const Vec& g) {
        t.accumulate(a, g.cwiseProduct(deriv));
      });
    }
    case ElementwiseOp::kRelu: {
      Vec out = av.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : Scalar(0); });
      return tape.push(std::move(out), [a](Tape<Scalar>& t, const Vec& g) {
        const Vec& x = t.value(a);
        Vec d(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) d(i) = x(i) > Scalar(0) ? g(i) : Scalar(0);
        t.accumulate(a, d);
      });
    }
    case ElementwiseOp::kSigmoid: {
      Vec out = av.unaryExpr([](Scalar v) { return detail::stable_sigmoid(v); });
      Vec deriv = out.unaryExpr([](Scalar y) { return y * (Scalar(1) - y); });
      return tape.push(std::move(out), [a, deriv](Tape<Scalar>& t, const Vec& g) {
        t.accumulate(a, g.cwiseProduct(deriv));
      });
    }
    case ElementwiseOp::kScale: {
      return tape.push(av * factor, [a, factor](Tape<Scalar>& t, const Vec& g) {
        t.accumulate(a, g * factor);
      });
    }
  }
  throw InvalidArgument("elementwise: unknown op");
}

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) { return elementwise(t, ElementwiseOp::kAdd, a, b); }
template <typename Scalar>
Var sub(Tape<Scalar>& t, Var a, Var b) { return elementwise(t, ElementwiseOp::kSub, a, b); }
template <typename Scalar>
Var mul(Tape<Scalar>& t, Var a, Var b) { return elementwise(t, ElementwiseOp::kMul, a, b); }
template <typename Scalar>
Var tanh(Tape<Scalar>& t, Var a) { return elementwise(t, ElementwiseOp::kTanh, a); }
template <typename Scalar>
Var relu(Tape<Scalar>& t, Var a) { return elementwise(t, ElementwiseOp::kRelu, a); }
template <typename Scalar>
Var sigmoid(Tape<Scalar>& t, Var a) { return elementwise(t, ElementwiseOp::kSigmoid, a); }
template <typename Scalar>
Var scale(Tape<Scalar>& t, Var a, Scalar factor) {
  return elementwise(t, ElementwiseOp::kScale, a, Var{}, factor);
}

template <typename Scalar>
Var dot(Tape<Scalar>& tape, Var x, Var y) {
  const auto& xv = tape.value(x);
  const auto& yv = tape.value(y);
  detail::require_same(xv.size(), yv.size(), "dot");
  Vector<Scalar> out(1);
  out(0) = static_cast<Scalar>(dot_accumulate(xv, yv));
  return tape.push(std::move(out), [x, y](Tape<Scalar>& t, const Vector<Scalar>& g) {
    const Vector<Scalar> dx = t.value(y) * g(0);
    const Vector<Scalar> dy = t.value(x) * g(0);
    t.accumulate(x, dx);
    t.accumulate(y, dy);
  });
}

template <typename Scalar>
Var squared_norm(Tape<Scalar>& tape, Var x) {
  Vector<Scalar> out(1);
  out(0) = static_cast<Scalar>(squared_norm_accumulate(tape.value(x)));
  return tape.push(std::move(out), [x](Tape<Scalar>& t, const Vector<Scalar>& g) {
    const Vector<Scalar> dx = t.value(x) * (Scalar(2) * g(0));
    t.accumulate(x, dx);
  });
}

template <typename Scalar>
Var concat(Tape<Scalar>& tape, std::span<const Var> parts) {
  Eigen::Index total = 0;
  for (Var p : parts) total += tape.value(p).size();
  Vector<Scalar> out(total);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    const auto& v = tape.value(p);
    out.segment(offset, v.size()) = v;
    offset += v.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.push(std::move(out), [inputs](Tape<Scalar>& t, const Vector<Scalar>& g) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const Eigen::Index n = t.value(p).size();
      t.accumulate(p, g.segment(off, n));
      off += n;
    }
  });
}

/// Packs scalar nodes into one vector node.
template <typename Scalar>
Var stack(Tape<Scalar>& tape, std::span<const Var> scalars) {
  Vector<Scalar> out(static_cast<Eigen::Index>(scalars.size()));
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (tape.value(scalars[i]).size() != 1) throw DimensionMismatch("stack: operand is not scalar");
    out(static_cast<Eigen::Index>(i)) = tape.value(scalars[i])(0);
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return tape.push(std::move(out), [inputs](Tape<Scalar>& t, const Vector<Scalar>& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      t.accumulate_at(inputs[i], 0, g(static_cast<Eigen::Index>(i)));
  });
}

/// Mean of scalar nodes, summed left to right in double.
template <typename Scalar>
Var mean(Tape<Scalar>& tape, std::span<const Var> scalars) {
  if (scalars.empty()) throw InvalidArgument("mean: empty operand list");
  double acc = 0.0;
  for (Var s : scalars) acc += static_cast<double>(tape.value(s)(0));
  const Scalar inv = Scalar(1) / static_cast<Scalar>(scalars.size());
  Vector<Scalar> out(1);
  out(0) = static_cast<Scalar>(acc / static_cast<double>(scalars.size()));
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return tape.push(std::move(out), [inputs, inv](Tape<Scalar>& t, const Vector<Scalar>& g) {
    for (Var s : inputs) t.accumulate_at(s, 0, g(0) * inv);
  });
}

/// Mean of selected rows of an embedding table (embedding bag).
template <typename Scalar>
Var embedding_bag_mean(Tape<Scalar>& tape, Parameter<Scalar>& table,
                       std::span<const std::uint32_t> ids) {
  if (ids.empty()) throw InvalidArgument("embedding_bag_mean: no ids");
  const Eigen::Index d = table.value.cols();
  Vector<Scalar> out(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    double acc = 0.0;
    for (std::uint32_t id : ids) {
      if (static_cast<Eigen::Index>(id) >= table.value.rows()) {
        throw DimensionMismatch("embedding_bag_mean: id " + std::to_string(id) +
                                " outside table of " + std::to_string(table.value.rows()) +
                                " rows");
      }
      acc += static_cast<double>(table.value(id, c));
    }
    out(c) = static_cast<Scalar>(acc / static_cast<double>(ids.size()));
  }
  std::vector<std::uint32_t> rows(ids.begin(), ids.end());
  return tape.push(std::move(out), [&table, rows](Tape<Scalar>&, const Vector<Scalar>& g) {
    const Scalar inv = Scalar(1) / static_cast<Scalar>(rows.size());
    for (std::uint32_t id : rows) table.grad.row(id) += (g * inv).transpose();
  });
}

}  // namespace rrra::num
