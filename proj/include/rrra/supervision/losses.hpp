#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rrra/numkernel/tape.hpp"

namespace rrra::supervision {

/// Outcome of a dual-encoder prediction against the gold label. The integer
/// values are the logit indices used everywhere, checkpoints included.
enum class OutcomeLabel : int { kTP = 0, kFN = 1, kFP = 2, kTN = 3 };

inline constexpr std::array<OutcomeLabel, 4> kAllLabels = {OutcomeLabel::kTP, OutcomeLabel::kFN,
                                                           OutcomeLabel::kFP, OutcomeLabel::kTN};

std::string_view to_string(OutcomeLabel label);
inline int index_of(OutcomeLabel label) { return static_cast<int>(label); }
inline bool is_error(OutcomeLabel label) {
  return label == OutcomeLabel::kFN || label == OutcomeLabel::kFP;
}
inline bool is_gold_positive(OutcomeLabel label) {
  return label == OutcomeLabel::kTP || label == OutcomeLabel::kFN;
}

/// pred = sigmoid(score) >= tau (ties count as predicted positive).
OutcomeLabel derive_outcome(int gold, double score, double tau);

struct ClassWeights {
  std::array<double, 4> w{1.0, 1.0, 1.0, 1.0};
  double gamma_imb = 0.0;

  double operator[](OutcomeLabel l) const { return w[static_cast<std::size_t>(index_of(l))]; }
};

/// raw_c = (total / (4 * max(count_c, 1)))^gamma, then divided by mean(raw).
ClassWeights class_weights(const std::array<std::uint64_t, 4>& counts, double gamma_imb);

/// Mean binary cross-entropy of sigmoid(score) against 0/1 labels, evaluated
/// as max(s, 0) - s*y + log1p(exp(-|s|)).
double contrastive_bce(std::span<const double> scores, std::span<const int> labels);

/// weight[label] * (logsumexp(logits) - logits[label]).
double weighted_ce(std::span<const double> logits, OutcomeLabel label, const ClassWeights& w);

struct JointLossConfig {
  double lambda = 0.5;
};

double joint_loss(double l_contrastive, double l_adapter, const JointLossConfig& cfg);

namespace detail {
void check_labels(std::span<const int> labels, std::size_t n);
inline double softplus_neg_abs(double s) { return std::log1p(std::exp(-std::abs(s))); }
}  // namespace detail

/// contrastive_bce over a vector node of scores. Gradient (sigmoid(s) - y) / N.
template <typename Scalar>
num::Var contrastive_bce_on_tape(num::Tape<Scalar>& tape, num::Var scores,
                                 std::span<const int> labels) {
  const auto& s = tape.value(scores);
  detail::check_labels(labels, static_cast<std::size_t>(s.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double si = static_cast<double>(s(i));
    const double y = labels[static_cast<std::size_t>(i)];
    acc += std::max(si, 0.0) - si * y + detail::softplus_neg_abs(si);
  }
  const double n = static_cast<double>(s.size());
  num::Vector<Scalar> out(1);
  out(0) = static_cast<Scalar>(acc / n);
  std::vector<int> ys(labels.begin(), labels.end());
  return tape.push(std::move(out), [scores, ys, n](num::Tape<Scalar>& t,
                                                   const num::Vector<Scalar>& g) {
    const auto& sv = t.value(scores);
    num::Vector<Scalar> d(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      const double p = num::sigmoid_value(static_cast<double>(sv(i)));
      d(i) = static_cast<Scalar>((p - ys[static_cast<std::size_t>(i)]) / n * g(0));
    }
    t.accumulate(scores, d);
  });
}

/// weighted_ce on a logits node with a fixed scalar weight. Gradient
/// weight * (softmax - onehot).
template <typename Scalar>
num::Var weighted_ce_on_tape(num::Tape<Scalar>& tape, num::Var logits, OutcomeLabel label,
                             double weight) {
  const auto& l = tape.value(logits);
  if (l.size() != 4) throw DimensionMismatch("weighted_ce: expected 4 logits, got " + std::to_string(l.size()));
  double m = static_cast<double>(l(0));
  for (Eigen::Index i = 1; i < 4; ++i) m = std::max(m, static_cast<double>(l(i)));
  double z = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) z += std::exp(static_cast<double>(l(i)) - m);
  const double lse = m + std::log(z);
  const int k = index_of(label);
  num::Vector<Scalar> out(1);
  out(0) = static_cast<Scalar>(weight * (lse - static_cast<double>(l(k))));
  return tape.push(std::move(out), [logits, k, weight, lse](num::Tape<Scalar>& t,
                                                            const num::Vector<Scalar>& g) {
    const auto& lv = t.value(logits);
    num::Vector<Scalar> d(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double p = std::exp(static_cast<double>(lv(i)) - lse);
      d(i) = static_cast<Scalar>(weight * (p - (i == k ? 1.0 : 0.0)) * g(0));
    }
    t.accumulate(logits, d);
  });
}

/// Softmax probabilities of a 4-logit vector, in label order.
template <typename Derived>
std::array<double, 4> softmax4(const Eigen::MatrixBase<Derived>& l) {
  double m = static_cast<double>(l.coeff(0));
  for (Eigen::Index i = 1; i < 4; ++i) m = std::max(m, static_cast<double>(l.coeff(i)));
  std::array<double, 4> p{};
  double z = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(l.coeff(i)) - m);
    z += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// Highest-logit label; ties go to the lower index.
template <typename Derived>
OutcomeLabel argmax_label(const Eigen::MatrixBase<Derived>& l) {
  int best = 0;
  for (int i = 1; i < 4; ++i)
    if (l.coeff(i) > l.coeff(best)) best = i;
  return static_cast<OutcomeLabel>(best);
}

}  // namespace rrra::supervision
