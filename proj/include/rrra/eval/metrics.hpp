#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rrra/data/corpus.hpp"
#include "rrra/encoder/dual_encoder.hpp"
#include "rrra/supervision/losses.hpp"

namespace rrra::eval {

inline constexpr std::array<std::size_t, 6> kDefaultKs = {1, 5, 10, 20, 50, 100};

/// query_id -> doc ids in rank order.
using Ranking = std::map<std::string, std::vector<std::string>>;

struct EvalReport {
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> recall_at;
  /// Same metric with hidden positives counted as relevant; empty when not computed.
  std::map<std::size_t, double> oracle_recall_at;
  /// Rank of the first relevant document per evaluated query, -1 if none retrieved.
  std::map<std::string, long> first_hit;
  std::size_t evaluated = 0;
  /// Queries that were ranked but have no relevant documents.
  std::size_t excluded = 0;
  std::map<std::string, std::string> metadata;
};

/// Hit-based recall: a query scores 1 at k if any relevant doc is in its top k.
EvalReport recall_at_k(const Ranking& ranked, const data::Qrels& qrels,
                       std::span<const std::size_t> ks = kDefaultKs);

/// Fills report.oracle_recall_at from the merged qrels.
void add_oracle_recall(EvalReport& report, const Ranking& ranked, const data::Qrels& oracle_qrels);

/// Columns: k, recall, oracle_recall (blank when absent). Metadata goes to a
/// leading block of "# key=value" lines.
std::string report_csv(const EvalReport& report);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
void print_report(std::ostream& os, const EvalReport& report);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool zero_division = false;
};

struct F1Report {
  std::array<ClassScore, 4> per_class;  // TP, FN, FP, TN
  double macro_f1 = 0.0;
  /// Binary {FN, FP} vs {TP, TN}.
  ClassScore error_detection;
  /// confusion[gold][pred]
  std::array<std::array<std::size_t, 4>, 4> confusion{};
  std::size_t n = 0;
};

F1Report adapter_f1(std::span<const supervision::OutcomeLabel> predictions,
                    std::span<const supervision::OutcomeLabel> gold);

std::string f1_csv(const F1Report& r);

// Rank buckets [0-3], [4-9], [10-49], [50-199], [200+].
inline constexpr std::array<std::size_t, 5> kBucketStarts = {0, 4, 10, 50, 200};

struct GradientBucket {
  std::size_t first_rank = 0;
  std::size_t last_rank = 0;  // inclusive; SIZE_MAX for the open bucket
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
};

struct GradientProfile {
  std::string sampler;
  std::vector<GradientBucket> buckets;
  double max_raw = 0.0;
  std::size_t pairs = 0;
  std::string normalization = "divided by the maximum raw magnitude within this run";
};

struct ProfileCandidate {
  std::size_t base_rank = 0;
  std::string text;
};

struct ProfileQuery {
  std::string text;
  std::vector<ProfileCandidate> candidates;
};

/// |d/dd BCE(sigma(q·d), y = 0)|_2, computed by the tape. Analytically
/// sigma(q·d) * |q|_2.
double negative_gradient_norm(const num::VectorF& q, const num::VectorF& d);

std::size_t bucket_of(std::size_t rank);

/// Gradient magnitude of the negative-pair loss with respect to each
/// candidate's document embedding, normalized by the run max and averaged
/// per base-rank bucket. The encoder is only read.
GradientProfile gradient_profile(const encoder::DualEncoder<float>& enc,
                                 const std::vector<ProfileQuery>& queries,
                                 const std::string& sampler);

std::string profile_csv(const std::vector<GradientProfile>& profiles);
void print_profiles(std::ostream& os, const std::vector<GradientProfile>& profiles);

}  // namespace rrra::eval
