#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrra/data/corpus.hpp"
#include "rrra/encoder/dual_encoder.hpp"
#include "rrra/encoder/similarity.hpp"

namespace rrra::index {

struct SearchHit {
  std::size_t row = 0;
  std::string doc_id;
  double score = 0.0;
};

/// Exact search over a dense n×d matrix. Row i is doc_ids[i].
class BruteForceIndex {
 public:
  BruteForceIndex(std::vector<std::string> doc_ids, num::MatrixF embeddings,
                  encoder::SimilarityKind kind);

  /// Top-k by similarity, ties by ascending doc_id. k is clipped to size().
  /// The scan is split across `threads` workers; results do not depend on it.
  std::vector<SearchHit> search(const num::VectorF& q, std::size_t k, unsigned threads = 1) const;

  std::vector<double> score_all(const num::VectorF& q, unsigned threads = 1) const;

  std::size_t size() const { return doc_ids_.size(); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }
  encoder::SimilarityKind kind() const { return kind_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const num::MatrixF& embeddings() const { return embeddings_; }
  auto row(std::size_t i) const { return embeddings_.row(static_cast<Eigen::Index>(i)).transpose(); }
  /// Throws InvalidArgument for unknown ids.
  std::size_t row_of(const std::string& doc_id) const;

 private:
  std::vector<std::string> doc_ids_;
  num::MatrixF embeddings_;
  encoder::SimilarityKind kind_;
  std::unordered_map<std::string, std::size_t> rows_;
};

/// Orders hits by descending score, then ascending doc_id.
bool hit_before(const SearchHit& a, const SearchHit& b);

/// Encodes every document once.
BruteForceIndex build_index(const std::vector<data::Document>& docs,
                            const encoder::DualEncoder<float>& enc, encoder::SimilarityKind kind);

}  // namespace rrra::index
