#include "rrra/pipeline/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "rrra/error.hpp"
#include "rrra/random.hpp"

namespace rrra::pipeline {

namespace {

constexpr std::size_t kTopicWords = 6;
constexpr std::size_t kFacetWords = 3;
constexpr std::size_t kFacets = 24;
constexpr std::size_t kBackgroundWords = 200;

class WordSource {
 public:
  WordSource(std::string style, Rng& rng) : style_(std::move(style)), rng_(rng) {
    if (style_ != "syllable" && style_ != "token")
      throw InvalidArgument("vocab_style must be syllable or token, got '" + style_ + "'");
  }

  std::string next() {
    if (style_ == "token") return "w" + std::to_string(counter_++);
    static constexpr char kCons[] = "bdfgklmnprstvz";
    static constexpr char kVow[] = "aeiou";
    for (;;) {
      const std::size_t syl = 2 + rng_.below(2);
      std::string w;
      for (std::size_t i = 0; i < syl; ++i) {
        w.push_back(kCons[rng_.below(sizeof kCons - 1)]);
        w.push_back(kVow[rng_.below(sizeof kVow - 1)]);
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> take(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  std::string style_;
  Rng& rng_;
  std::set<std::string> used_;
  std::size_t counter_ = 0;
};

std::vector<std::string> pick(const std::vector<std::string>& pool, std::size_t n, Rng& rng) {
  std::vector<std::string> copy = pool;
  rng.shuffle(copy);
  copy.resize(std::min(n, copy.size()));
  return copy;
}

std::string join_shuffled(std::vector<std::string> words, Rng& rng) {
  rng.shuffle(words);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string id(char prefix, std::size_t n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, n);
  return buf;
}

}  // namespace

std::uint64_t hidden_per_query(const SyntheticSpec& spec) {
  const double raw = spec.planted_fn_rate * static_cast<double>(spec.docs_per_cluster);
  return static_cast<std::uint64_t>(std::ceil(raw - 1e-9));
}

data::Corpus generate_synthetic(const SyntheticSpec& spec) {
  if (!(spec.planted_fn_rate >= 0.0 && spec.planted_fn_rate <= 0.9))
    throw InvalidArgument("planted_fn_rate must lie in [0, 0.9]");
  if (spec.n_clusters == 0 || spec.docs_per_cluster == 0 || spec.queries_per_cluster == 0)
    throw InvalidArgument("synthetic corpus sizes must be positive");
  const std::uint64_t hidden = hidden_per_query(spec);
  const std::uint64_t group = 1 + hidden;
  if (spec.queries_per_cluster * group > spec.docs_per_cluster) {
    throw InvalidArgument("queries_per_cluster * (1 + hidden) = " +
                          std::to_string(spec.queries_per_cluster * group) +
                          " exceeds docs_per_cluster = " + std::to_string(spec.docs_per_cluster));
  }

  Rng vocab_rng(derive_seed(spec.seed, "synthetic.vocab"));
  WordSource words(spec.vocab_style, vocab_rng);
  const auto background = words.take(kBackgroundWords);
  std::vector<std::vector<std::string>> facets;
  for (std::size_t f = 0; f < kFacets; ++f) facets.push_back(words.take(kFacetWords));
  const std::size_t n_queries = spec.n_clusters * spec.queries_per_cluster;
  // Each detail word ends up in about 1.5 queries, so most recur and get trained.
  const auto details = words.take(std::max<std::size_t>(8, n_queries * 4 / 3));

  Rng rng(derive_seed(spec.seed, "synthetic.text"));
  data::Corpus corpus;
  const int doc_width = static_cast<int>(std::to_string(spec.n_clusters * spec.docs_per_cluster).size());
  const int query_width = static_cast<int>(std::to_string(n_queries).size());

  auto random_background = [&](std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(background[rng.below(background.size())]);
    return out;
  };

  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    const auto topic = words.take(kTopicWords);
    // Shuffled id slots so that id order says nothing about a document's role.
    std::vector<std::size_t> slots(spec.docs_per_cluster);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    rng.shuffle(slots);
    std::size_t next_doc = 0;
    auto add_doc = [&](std::vector<std::string> text_words) {
      const std::string doc_id = id('d', c * spec.docs_per_cluster + slots[next_doc++], doc_width);
      corpus.documents.push_back({doc_id, join_shuffled(std::move(text_words), rng)});
      return doc_id;
    };

    for (std::size_t g = 0; g < spec.queries_per_cluster; ++g) {
      const auto& facet = facets[rng.below(facets.size())];
      std::vector<std::string> detail;
      while (detail.size() < 2) {
        const auto& w = details[rng.below(details.size())];
        if (std::find(detail.begin(), detail.end(), w) == detail.end()) detail.push_back(w);
      }
      const std::string qid = id('q', c * spec.queries_per_cluster + g, query_width);

      std::vector<std::string> qwords = pick(topic, 2, rng);
      for (const auto& w : pick(facet, 2, rng)) qwords.push_back(w);
      qwords.insert(qwords.end(), detail.begin(), detail.end());
      corpus.queries.push_back({qid, join_shuffled(std::move(qwords), rng)});

      std::vector<std::string> pos = pick(topic, 3, rng);
      for (const auto& w : pick(facet, 2, rng)) pos.push_back(w);
      pos.insert(pos.end(), detail.begin(), detail.end());
      for (const auto& w : random_background(4)) pos.push_back(w);
      corpus.qrels.push_back({qid, add_doc(std::move(pos)), 1});

      for (std::uint64_t h = 0; h < hidden; ++h) {
        std::vector<std::string> hw = pick(topic, 3, rng);
        for (const auto& w : pick(facet, 2, rng)) hw.push_back(w);
        hw.push_back(details[rng.below(details.size())]);
        for (const auto& w : random_background(4)) hw.push_back(w);
        corpus.hidden_qrels.push_back({qid, add_doc(std::move(hw)), 1});
      }
    }
    while (next_doc < spec.docs_per_cluster) {
      std::vector<std::string> ow = pick(topic, 3, rng);
      ow.push_back(details[rng.below(details.size())]);
      for (const auto& w : random_background(5)) ow.push_back(w);
      add_doc(std::move(ow));
    }
  }

  std::sort(corpus.documents.begin(), corpus.documents.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  corpus.splits = data::assign_splits(corpus.queries, spec.train_frac, spec.dev_frac, spec.seed);
  corpus.validate();
  return corpus;
}

}  // namespace rrra::pipeline
