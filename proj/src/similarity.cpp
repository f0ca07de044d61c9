#include "rrra/encoder/similarity.hpp"

namespace rrra::encoder {

SimilarityKind parse_similarity(std::string_view name) {
  if (name == "dot") return SimilarityKind::kDot;
  if (name == "cosine") return SimilarityKind::kCosine;
  throw InvalidArgument("unknown similarity kind '" + std::string(name) + "' (expected dot|cosine)");
}

std::string to_string(SimilarityKind kind) {
  return kind == SimilarityKind::kDot ? "dot" : "cosine";
}

double base_score_unit(SimilarityKind kind, double score) {
  if (kind == SimilarityKind::kCosine) return std::clamp((1.0 + score) / 2.0, 0.0, 1.0);
  return num::sigmoid_value(score);
}

}  // namespace rrra::encoder
