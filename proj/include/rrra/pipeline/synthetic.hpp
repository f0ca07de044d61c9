#pragma once

#include <cstdint>
#include <string>

#include "rrra/data/corpus.hpp"

namespace rrra::pipeline {

struct SyntheticSpec {
  std::uint64_t n_clusters = 50;
  std::uint64_t docs_per_cluster = 20;
  std::uint64_t queries_per_cluster = 4;
  double planted_fn_rate = 0.2;
  std::string vocab_style = "syllable";  // syllable | token
  std::uint64_t seed = 42;
  double train_frac = 0.7;
  double dev_frac = 0.15;
};

/// ceil(rate * docs_per_cluster), guarded against float noise just above an integer.
std::uint64_t hidden_per_query(const SyntheticSpec& spec);

/// Clustered corpus with planted false negatives.
///
/// Every cluster has its own topic words. Each query in a cluster owns a group
/// of 1 + hidden_per_query documents that share the query's facet (a small
/// word set drawn from a global facet pool, so facets recur across clusters).
/// The labeled positive additionally carries the query's two detail words;
/// the other group members are relevant but unlabeled and go to
/// hidden_qrels. Remaining cluster documents carry the topic only.
///
/// Errors: rates outside [0, 0.9], zero sizes, or groups that do not fit in a
/// cluster (queries_per_cluster * (1 + hidden) > docs_per_cluster).
data::Corpus generate_synthetic(const SyntheticSpec& spec);

}  // namespace rrra::pipeline
