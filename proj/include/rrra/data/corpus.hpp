#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace rrra::data {

struct Document {
  std::string id;
  std::string text;
};

struct Query {
  std::string id;
  std::string text;
};

struct Judgement {
  std::string query_id;
  std::string doc_id;
  int relevance = 1;
};

enum class Split { kTrain, kDev, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);

/// query_id -> set of relevant doc ids (relevance > 0).
using Qrels = std::map<std::string, std::set<std::string>>;

struct Corpus {
  std::vector<Document> documents;
  std::vector<Query> queries;
  std::vector<Judgement> qrels;
  /// Relevant but unlabeled documents; visible to evaluation only.
  std::vector<Judgement> hidden_qrels;
  std::map<std::string, Split> splits;

  /// Throws DataError on duplicate ids, unresolvable judgements, or overlap
  /// between qrels and hidden_qrels.
  void validate() const;

  Qrels relevant() const;
  Qrels hidden_relevant() const;
  /// qrels and hidden_qrels merged.
  Qrels oracle_relevant() const;
  std::vector<const Query*> queries_in(Split s) const;
  std::unordered_map<std::string, std::size_t> document_rows() const;
};

// On-disk layout inside a data directory:
//   documents.jsonl, queries.jsonl   {"id": ..., "text": ...} per line
//   qrels.tsv, hidden_qrels.tsv      query_id \t doc_id \t relevance
//   splits.tsv                       query_id \t train|dev|test
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

/// Deterministic 70/15/15 style assignment from a seed when no splits file exists.
std::map<std::string, Split> assign_splits(const std::vector<Query>& queries, double train_frac,
                                           double dev_frac, std::uint64_t seed);

}  // namespace rrra::data
