#pragma once

#include <algorithm>
#include <string>
#include <string_view>

#include "rrra/numkernel/tape.hpp"

namespace rrra::encoder {

enum class SimilarityKind { kDot, kCosine };

SimilarityKind parse_similarity(std::string_view name);
std::string to_string(SimilarityKind kind);

template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& q, const Eigen::MatrixBase<B>& d) {
  if (q.size() != d.size()) {
    throw DimensionMismatch("cosine: [" + std::to_string(q.size()) + "] vs [" +
                            std::to_string(d.size()) + "]");
  }
  const double nq = num::squared_norm_accumulate(q);
  const double nd = num::squared_norm_accumulate(d);
  if (nq == 0.0 || nd == 0.0) throw DegenerateVector("cosine similarity of a zero vector");
  const double c = num::dot_accumulate(q, d) / (std::sqrt(nq) * std::sqrt(nd));
  return std::clamp(c, -1.0, 1.0);
}

template <typename A, typename B>
double similarity(SimilarityKind kind, const Eigen::MatrixBase<A>& q, const Eigen::MatrixBase<B>& d) {
  if (kind == SimilarityKind::kCosine) return cosine(q, d);
  if (q.size() != d.size()) {
    throw DimensionMismatch("dot: [" + std::to_string(q.size()) + "] vs [" +
                            std::to_string(d.size()) + "]");
  }
  return num::dot_accumulate(q, d);
}

/// (1 + cosine) / 2, in [0, 1].
template <typename A, typename B>
double unit_interval_similarity(const Eigen::MatrixBase<A>& q, const Eigen::MatrixBase<B>& d) {
  return std::clamp((1.0 + cosine(q, d)) / 2.0, 0.0, 1.0);
}

/// Maps a raw base score into [0, 1] monotonically: sigmoid for dot scores,
/// (1 + s) / 2 for cosine scores.
double base_score_unit(SimilarityKind kind, double score);

}  // namespace rrra::encoder
