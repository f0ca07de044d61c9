#pragma once

// The relation-aware adapter. Given a query embedding q and a context
// embedding c it builds z = [q - c, q * c, q + c], runs a one-layer tanh
// trunk, and reads two heads off the hidden state: a residual correction
// (delta, so that a = c + delta) and four outcome logits ordered
// (TP, FN, FP, TN).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rrra/numkernel/tape.hpp"
#include "rrra/random.hpp"

namespace rrra::adapter {

inline constexpr int kNumClasses = 4;

struct AdapterFlags {
  bool use_residual = true;
  bool use_linear_norm = true;
  bool use_context_init = true;
};

template <typename Scalar>
struct AdapterOutput {
  num::Vector<Scalar> a;
  num::Vector<Scalar> delta;
  num::Vector<Scalar> logits;
  double alpha_star = 0.0;
};

struct Projection {
  double alpha_star = 0.0;
  double loss = 0.0;
};

template <typename A, typename B>
auto relation_vector(const Eigen::MatrixBase<A>& q, const Eigen::MatrixBase<B>& c) {
  using Scalar = typename A::Scalar;
  if (q.size() != c.size()) {
    throw DimensionMismatch("relation_vector: q is [" + std::to_string(q.size()) + "], c is [" +
                            std::to_string(c.size()) + "]");
  }
  const Eigen::Index d = q.size();
  num::Vector<Scalar> z(3 * d);
  z.segment(0, d) = q - c;
  z.segment(d, d) = q.cwiseProduct(c);
  z.segment(2 * d, d) = q + c;
  return z;
}

/// Closest point to `a` on the segment [c, q]:
///   alpha* = clamp(((a - c)·(q - c)) / |q - c|^2, 0, 1)
///   loss   = |a - (alpha* q + (1 - alpha*) c)|^2
/// When |q - c| <= 1e-12 the segment is a point: alpha* = 0, loss = |a - c|^2.
template <typename A, typename Q, typename C>
Projection project_alpha(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<Q>& q,
                         const Eigen::MatrixBase<C>& c) {
  if (a.size() != q.size() || q.size() != c.size()) {
    throw DimensionMismatch("project_alpha: a, q, c have sizes " + std::to_string(a.size()) + ", " +
                            std::to_string(q.size()) + ", " + std::to_string(c.size()));
  }
  double seg2 = 0.0;
  double proj = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double u = static_cast<double>(q.coeff(i)) - static_cast<double>(c.coeff(i));
    const double r = static_cast<double>(a.coeff(i)) - static_cast<double>(c.coeff(i));
    seg2 += u * u;
    proj += r * u;
  }
  Projection p;
  if (seg2 <= 1e-24) {
    p.alpha_star = 0.0;
  } else {
    p.alpha_star = std::clamp(proj / seg2, 0.0, 1.0);
  }
  const double al = p.alpha_star;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double target =
        al * static_cast<double>(q.coeff(i)) + (1.0 - al) * static_cast<double>(c.coeff(i));
    const double r = static_cast<double>(a.coeff(i)) - target;
    p.loss += r * r;
  }
  return p;
}

/// Number of linear-norm loss evaluations since process start (or the last
/// reset). Stage 3 must leave it untouched.
std::uint64_t norm_loss_evaluations();
void reset_norm_loss_evaluations();
void count_norm_loss_evaluation(std::uint64_t n = 1);

template <typename Scalar>
class Adapter {
 public:
  using Vec = num::Vector<Scalar>;

  struct TapeOutput {
    num::Var a;
    num::Var delta;
    num::Var logits;
  };

  Adapter(int dim, int hidden, AdapterFlags flags = {})
      : dim_(dim),
        hidden_(hidden),
        flags_(flags),
        trunk_w_("adapter.trunk.weight", hidden, 3 * dim),
        trunk_b_("adapter.trunk.bias", hidden, 1),
        residual_w_("adapter.residual.weight", dim, hidden),
        residual_b_("adapter.residual.bias", dim, 1),
        class_w_("adapter.class.weight", kNumClasses, hidden),
        class_b_("adapter.class.bias", kNumClasses, 1) {}

  /// Trunk ~ uniform(±1/sqrt(3d)). The class head starts at zero so the
  /// initial logits are uniform. With context init the residual head is zero
  /// too (a == c exactly); otherwise it is uniform(±1/sqrt(h)).
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "adapter.init"));
    const double trunk_bound = 1.0 / std::sqrt(3.0 * dim_);
    for (Eigen::Index i = 0; i < trunk_w_.value.size(); ++i)
      trunk_w_.value.data()[i] = static_cast<Scalar>(rng.uniform(-trunk_bound, trunk_bound));
    trunk_b_.value.setZero();
    residual_b_.value.setZero();
    if (flags_.use_context_init) {
      residual_w_.value.setZero();
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
      for (Eigen::Index i = 0; i < residual_w_.value.size(); ++i)
        residual_w_.value.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    class_w_.value.setZero();
    class_b_.value.setZero();
  }

  template <typename Q, typename C>
  AdapterOutput<Scalar> adapt(const Eigen::MatrixBase<Q>& q, const Eigen::MatrixBase<C>& c) const {
    check_dims(q.size(), c.size());
    const Vec z = relation_vector(q, c);
    Vec pre = num::matvec_accumulate(trunk_w_.value, z);
    pre += trunk_b_.value.col(0);
    const Vec h = pre.unaryExpr([](Scalar v) { return std::tanh(v); });

    AdapterOutput<Scalar> out;
    out.delta = num::matvec_accumulate(residual_w_.value, h);
    out.delta += residual_b_.value.col(0);
    if (flags_.use_residual) {
      out.a = c + out.delta;
    } else {
      out.a = out.delta;
    }
    out.logits = num::matvec_accumulate(class_w_.value, h);
    out.logits += class_b_.value.col(0);
    out.alpha_star = project_alpha(out.a, q, c).alpha_star;
    return out;
  }

  TapeOutput adapt_on_tape(num::Tape<Scalar>& tape, num::Var q, num::Var c) {
    check_dims(tape.value(q).size(), tape.value(c).size());
    const num::Var diff = num::sub(tape, q, c);
    const num::Var prod = num::mul(tape, q, c);
    const num::Var sum = num::add(tape, q, c);
    const num::Var parts[] = {diff, prod, sum};
    const num::Var z = num::concat<Scalar>(tape, parts);
    const num::Var h =
        num::tanh(tape, num::add_bias(tape, num::matvec(tape, trunk_w_, z), trunk_b_));
    TapeOutput out;
    out.delta = num::add_bias(tape, num::matvec(tape, residual_w_, h), residual_b_);
    out.a = flags_.use_residual ? num::add(tape, c, out.delta) : out.delta;
    out.logits = num::add_bias(tape, num::matvec(tape, class_w_, h), class_b_);
    return out;
  }

  int dim() const { return dim_; }
  int hidden() const { return hidden_; }
  const AdapterFlags& flags() const { return flags_; }

  std::vector<num::Parameter<Scalar>*> parameters() {
    return {&trunk_w_, &trunk_b_, &residual_w_, &residual_b_, &class_w_, &class_b_};
  }
  std::vector<const num::Parameter<Scalar>*> parameters() const {
    return {&trunk_w_, &trunk_b_, &residual_w_, &residual_b_, &class_w_, &class_b_};
  }
  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

 private:
  void check_dims(Eigen::Index q, Eigen::Index c) const {
    if (q != dim_ || c != dim_) {
      throw DimensionMismatch("adapter expects dim " + std::to_string(dim_) + ", got q [" +
                              std::to_string(q) + "], c [" + std::to_string(c) + "]");
    }
  }

  int dim_;
  int hidden_;
  AdapterFlags flags_;
  num::Parameter<Scalar> trunk_w_, trunk_b_;
  num::Parameter<Scalar> residual_w_, residual_b_;
  num::Parameter<Scalar> class_w_, class_b_;
};

/// Linear-norm loss for one pair, recorded on the tape. alpha* is held fixed in
/// the backward pass (envelope argument), so the gradients are
///   dL/da = 2r, dL/dq = -2 alpha* r, dL/dc = -2 (1 - alpha*) r,
/// with r = a - (alpha* q + (1 - alpha*) c).
template <typename Scalar>
num::Var norm_loss_on_tape(num::Tape<Scalar>& tape, num::Var a, num::Var q, num::Var c) {
  const Projection p = project_alpha(tape.value(a), tape.value(q), tape.value(c));
  count_norm_loss_evaluation();
  num::Vector<Scalar> out(1);
  out(0) = static_cast<Scalar>(p.loss);
  const double alpha = p.alpha_star;
  return tape.push(std::move(out), [a, q, c, alpha](num::Tape<Scalar>& t,
                                                    const num::Vector<Scalar>& g) {
    const auto& av = t.value(a);
    const auto& qv = t.value(q);
    const auto& cv = t.value(c);
    num::Vector<Scalar> r(av.size());
    for (Eigen::Index i = 0; i < av.size(); ++i) {
      const double target =
          alpha * static_cast<double>(qv(i)) + (1.0 - alpha) * static_cast<double>(cv(i));
      r(i) = static_cast<Scalar>(2.0 * (static_cast<double>(av(i)) - target));
    }
    r *= g(0);
    t.accumulate(a, r);
    t.accumulate(q, r * static_cast<Scalar>(-alpha));
    t.accumulate(c, r * static_cast<Scalar>(-(1.0 - alpha)));
  });
}

/// Mean linear-norm loss over adapter outputs for (q, c) pairs.
template <typename Scalar>
double norm_loss_batch(const std::vector<AdapterOutput<Scalar>>& outputs,
                       const std::vector<std::pair<num::Vector<Scalar>, num::Vector<Scalar>>>& pairs) {
  if (outputs.empty()) throw InvalidArgument("norm_loss_batch: empty batch");
  if (outputs.size() != pairs.size()) {
    throw DimensionMismatch("norm_loss_batch: " + std::to_string(outputs.size()) + " outputs for " +
                            std::to_string(pairs.size()) + " pairs");
  }
  count_norm_loss_evaluation(outputs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    acc += project_alpha(outputs[i].a, pairs[i].first, pairs[i].second).loss;
  return acc / static_cast<double>(outputs.size());
}

/// Squared distance from a to the endpoint its label points at (q for gold
/// positives TP/FN, c for FP/TN), divided by |q - c|^2 so the term does not
/// depend on the embedding scale. The divisor is treated as a constant.
template <typename Scalar>
num::Var directional_loss_on_tape(num::Tape<Scalar>& tape, num::Var a, num::Var q, num::Var c,
                                  bool toward_query) {
  const num::Var target = toward_query ? q : c;
  const double span = num::squared_norm_accumulate(tape.value(q) - tape.value(c));
  const num::Var dist = num::squared_norm(tape, num::sub(tape, a, target));
  return num::scale(tape, dist, static_cast<Scalar>(1.0 / std::max(span, 1e-12)));
}

}  // namespace rrra::adapter
