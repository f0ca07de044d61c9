#pragma once

// Dual scoring of mined candidates and its two consumers.
//
//   s_hn = unit_sim(q, a)        informativeness
//   s_fn = unit_sim(a, c)        false-negative likelihood
//   resample score  s_hn * (1 - s_fn)^gamma_rs      (training)
//   rerank score    s_base01 * s_hn^lambda_rr        (inference)
//
// where a is the adapter's refined embedding of c and unit_sim = (1 + cos)/2.

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rrra/adapter/adapter.hpp"
#include "rrra/index/brute_force_index.hpp"
#include "rrra/random.hpp"

namespace rrra::sampling {

struct ScoredCandidate {
  std::string query_id;
  std::string doc_id;
  std::size_t row = 0;  // row in the document index
  double s_base = 0.0;
  double s_hn = 0.0;
  double s_fn = 0.0;
  double composite = 0.0;
  std::size_t rank = 0;
  /// Adapter class probabilities (TP, FN, FP, TN); exported, not used in scoring.
  std::array<double, 4> class_probs{0.0, 0.0, 0.0, 0.0};
};

enum class SamplerKind { kRandom, kTopK, kRrra };
SamplerKind parse_sampler(std::string_view name);
std::string to_string(SamplerKind kind);

enum class ResampleMode { kProportional, kTopByScore };
ResampleMode parse_resample_mode(std::string_view name);
std::string to_string(ResampleMode mode);

struct ScoreParams {
  double gamma_rs = 1.0;
  double lambda_rr = 1.0;
};

struct PairScores {
  double s_hn = 0.0;
  double s_fn = 0.0;
  std::array<double, 4> class_probs{};
};

PairScores score_pair(const num::VectorF& q, const num::VectorF& c,
                      const adapter::Adapter<float>& adapter);

/// s_hn * (1 - s_fn)^gamma_rs with 0^0 = 1. Inputs must lie in [0, 1].
double resample_score(double s_hn, double s_fn, double gamma_rs);

/// s_base * s_adapter^lambda_rr with 0^0 = 1. Inputs must lie in [0, 1].
double rerank_score(double s_base_unit, double s_adapter, double lambda_rr);

/// Top-k documents by base score excluding `exclude`, ranked 0..k-1 with ties
/// broken by ascending doc_id. k larger than the pool returns everything.
std::vector<ScoredCandidate> mine_hard_negatives(const index::BruteForceIndex& index,
                                                 const num::VectorF& q, const std::string& query_id,
                                                 std::size_t k, const std::set<std::string>& exclude);

/// Fills s_hn, s_fn and class_probs for each candidate.
void score_candidates(std::vector<ScoredCandidate>& candidates, const num::VectorF& q,
                      const index::BruteForceIndex& index, const adapter::Adapter<float>& adapter);

struct ResampleOutcome {
  std::vector<ScoredCandidate> picked;
  bool uniform_fallback = false;
};

/// Draws m distinct candidates. Proportional mode samples without replacement
/// with probability proportional to the resample score; when every remaining
/// score is zero the draw falls back to uniform and the outcome is flagged.
ResampleOutcome resample(const std::vector<ScoredCandidate>& candidates, double gamma_rs,
                         std::size_t m, Rng& rng, ResampleMode mode = ResampleMode::kProportional);

/// composite = rerank_score(base01(s_base), s_hn, lambda_rr); sorted by
/// descending composite, then descending s_base, then ascending doc_id.
std::vector<ScoredCandidate> rerank(std::vector<ScoredCandidate> candidates, double lambda_rr,
                                    encoder::SimilarityKind base_kind);

/// Baselines. kRandom draws uniformly without replacement from `pool`; kTopK
/// takes the first m of `pool` by s_base. m > |pool| is an error.
std::vector<ScoredCandidate> baseline_sample(SamplerKind kind,
                                             const std::vector<ScoredCandidate>& pool,
                                             std::size_t m, Rng& rng);

/// Sorts by descending s_base (ties ascending doc_id) and renumbers ranks.
void sort_by_base(std::vector<ScoredCandidate>& candidates);

// Columns: query_id, doc_id, s_base, s_hn, s_fn, composite, rank, then the
// four class probabilities when `with_probs` is set.
void write_candidates_tsv(const std::filesystem::path& path,
                          const std::vector<ScoredCandidate>& candidates, bool with_probs = false);
std::vector<ScoredCandidate> read_candidates_tsv(const std::filesystem::path& path);

}  // namespace rrra::sampling
