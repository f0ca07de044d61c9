#include "rrra/supervision/losses.hpp"

#include <algorithm>
#include <numeric>

namespace rrra::supervision {

std::string_view to_string(OutcomeLabel label) {
  switch (label) {
    case OutcomeLabel::kTP: return "TP";
    case OutcomeLabel::kFN: return "FN";
    case OutcomeLabel::kFP: return "FP";
    case OutcomeLabel::kTN: return "TN";
  }
  return "?";
}

OutcomeLabel derive_outcome(int gold, double score, double tau) {
  const bool pred = num::sigmoid_value(score) >= tau;
  if (gold != 0) return pred ? OutcomeLabel::kTP : OutcomeLabel::kFN;
  return pred ? OutcomeLabel::kFP : OutcomeLabel::kTN;
}

ClassWeights class_weights(const std::array<std::uint64_t, 4>& counts, double gamma_imb) {
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (total == 0) throw InvalidArgument("class_weights: all class counts are zero");
  if (!(gamma_imb >= 0.0) || !std::isfinite(gamma_imb))
    throw InvalidArgument("class_weights: gamma_imb must be finite and non-negative");
  std::array<double, 4> raw{};
  double sum = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double denom = 4.0 * static_cast<double>(std::max<std::uint64_t>(counts[c], 1));
    raw[c] = std::pow(static_cast<double>(total) / denom, gamma_imb);
    sum += raw[c];
  }
  ClassWeights w;
  w.gamma_imb = gamma_imb;
  const double mean = sum / 4.0;
  for (std::size_t c = 0; c < 4; ++c) w.w[c] = raw[c] / mean;
  return w;
}

namespace detail {
void check_labels(std::span<const int> labels, std::size_t n) {
  if (n == 0) throw InvalidArgument("contrastive_bce: empty input");
  if (labels.size() != n) {
    throw DimensionMismatch("contrastive_bce: " + std::to_string(n) + " scores, " +
                            std::to_string(labels.size()) + " labels");
  }
  for (int y : labels)
    if (y != 0 && y != 1) throw InvalidArgument("contrastive_bce: label " + std::to_string(y) + " not in {0,1}");
}
}  // namespace detail

double contrastive_bce(std::span<const double> scores, std::span<const int> labels) {
  detail::check_labels(labels, scores.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    acc += std::max(s, 0.0) - s * labels[i] + detail::softplus_neg_abs(s);
  }
  return acc / static_cast<double>(scores.size());
}

double weighted_ce(std::span<const double> logits, OutcomeLabel label, const ClassWeights& w) {
  if (logits.size() != 4) throw DimensionMismatch("weighted_ce: expected 4 logits, got " + std::to_string(logits.size()));
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  return w[label] * (m + std::log(z) - logits[static_cast<std::size_t>(index_of(label))]);
}

double joint_loss(double l_contrastive, double l_adapter, const JointLossConfig& cfg) {
  return l_contrastive + cfg.lambda * l_adapter;
}

}  // namespace rrra::supervision
