#include "rrra/index/brute_force_index.hpp"

#include <algorithm>
#include <thread>

namespace rrra::index {

BruteForceIndex::BruteForceIndex(std::vector<std::string> doc_ids, num::MatrixF embeddings,
                                 encoder::SimilarityKind kind)
    : doc_ids_(std::move(doc_ids)), embeddings_(std::move(embeddings)), kind_(kind) {
  if (static_cast<Eigen::Index>(doc_ids_.size()) != embeddings_.rows()) {
    throw DimensionMismatch("index: " + std::to_string(doc_ids_.size()) + " ids for " +
                            std::to_string(embeddings_.rows()) + " embedding rows");
  }
  for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
    if (!rows_.emplace(doc_ids_[i], i).second) throw DataError("index: duplicate doc id '" + doc_ids_[i] + "'");
  }
}

std::size_t BruteForceIndex::row_of(const std::string& doc_id) const {
  auto it = rows_.find(doc_id);
  if (it == rows_.end()) throw InvalidArgument("index: unknown doc id '" + doc_id + "'");
  return it->second;
}

std::vector<double> BruteForceIndex::score_all(const num::VectorF& q, unsigned threads) const {
  if (q.size() != embeddings_.cols()) {
    throw DimensionMismatch("search: query is [" + std::to_string(q.size()) + "], index dim " +
                            std::to_string(embeddings_.cols()));
  }
  const std::size_t n = size();
  std::vector<double> scores(n);
  auto scan = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) scores[i] = encoder::similarity(kind_, q, row(i));
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    scan(0, n);
    return scores;
  }
  // Each worker owns a contiguous slice of `scores`.
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = std::min(n, t * chunk);
    const std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back(scan, lo, hi);
  }
  for (auto& th : pool) th.join();
  return scores;
}

bool hit_before(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

std::vector<SearchHit> BruteForceIndex::search(const num::VectorF& q, std::size_t k,
                                               unsigned threads) const {
  const auto scores = score_all(q, threads);
  std::vector<SearchHit> hits(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) hits[i] = SearchHit{i, doc_ids_[i], scores[i]};
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), hit_before);
  hits.resize(k);
  return hits;
}

BruteForceIndex build_index(const std::vector<data::Document>& docs,
                            const encoder::DualEncoder<float>& enc, encoder::SimilarityKind kind) {
  if (docs.empty()) throw InvalidArgument("build_index: empty corpus");
  num::MatrixF m(static_cast<Eigen::Index>(docs.size()), enc.dim());
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    try {
      m.row(static_cast<Eigen::Index>(i)) = enc.encode(docs[i].text).transpose();
    } catch (const Error& e) {
      throw DataError("document '" + docs[i].id + "': " + e.what());
    }
    ids.push_back(docs[i].id);
  }
  return BruteForceIndex(std::move(ids), std::move(m), kind);
}

}  // namespace rrra::index
