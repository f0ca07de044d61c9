#include "rrra/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "rrra/binary_io.hpp"

namespace rrra::eval {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::size_t, double> hit_rates(const Ranking& ranked, const data::Qrels& qrels,
                                        std::span<const std::size_t> ks,
                                        std::map<std::string, long>* first_hit,
                                        std::size_t* evaluated, std::size_t* excluded) {
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : ks) hits[k] = 0;
  std::size_t n = 0, skipped = 0;
  for (const auto& [qid, docs] : ranked) {
    auto it = qrels.find(qid);
    if (it == qrels.end() || it->second.empty()) {
      ++skipped;
      continue;
    }
    ++n;
    long first = -1;
    for (std::size_t r = 0; r < docs.size(); ++r) {
      if (it->second.count(docs[r])) {
        first = static_cast<long>(r);
        break;
      }
    }
    if (first_hit) (*first_hit)[qid] = first;
    for (std::size_t k : ks)
      if (first >= 0 && static_cast<std::size_t>(first) < k) ++hits[k];
  }
  std::map<std::size_t, double> out;
  for (std::size_t k : ks) out[k] = n == 0 ? 0.0 : static_cast<double>(hits[k]) / static_cast<double>(n);
  if (evaluated) *evaluated = n;
  if (excluded) *excluded = skipped;
  return out;
}

}  // namespace

EvalReport recall_at_k(const Ranking& ranked, const data::Qrels& qrels,
                       std::span<const std::size_t> ks) {
  if (ks.empty()) throw InvalidArgument("recall_at_k: no cutoffs");
  for (std::size_t k : ks)
    if (k == 0) throw InvalidArgument("recall_at_k: cutoffs must be positive");
  EvalReport r;
  r.ks.assign(ks.begin(), ks.end());
  std::sort(r.ks.begin(), r.ks.end());
  r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
  r.recall_at = hit_rates(ranked, qrels, r.ks, &r.first_hit, &r.evaluated, &r.excluded);
  return r;
}

void add_oracle_recall(EvalReport& report, const Ranking& ranked, const data::Qrels& oracle_qrels) {
  // Restrict to the queries the primary report evaluated so both columns share a denominator.
  Ranking subset;
  for (const auto& [qid, _] : report.first_hit) {
    auto it = ranked.find(qid);
    if (it != ranked.end()) subset.emplace(qid, it->second);
  }
  report.oracle_recall_at = hit_rates(subset, oracle_qrels, report.ks, nullptr, nullptr, nullptr);
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  for (const auto& [k, v] : report.metadata) os << "# " << k << '=' << v << '\n';
  os << "# evaluated=" << report.evaluated << '\n' << "# excluded=" << report.excluded << '\n';
  os << "k,recall,oracle_recall\n";
  for (std::size_t k : report.ks) {
    os << k << ',' << fmt(report.recall_at.at(k)) << ',';
    if (auto it = report.oracle_recall_at.find(k); it != report.oracle_recall_at.end()) os << fmt(it->second);
    os << '\n';
  }
  return os.str();
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  io::write_text_atomic(path, report_csv(report));
}

void print_report(std::ostream& os, const EvalReport& report) {
  os << "queries evaluated: " << report.evaluated << " (excluded without qrels: " << report.excluded << ")\n";
  os << std::setw(6) << "k" << std::setw(12) << "recall";
  if (!report.oracle_recall_at.empty()) os << std::setw(16) << "oracle_recall";
  os << '\n';
  for (std::size_t k : report.ks) {
    os << std::setw(6) << k << std::setw(12) << std::fixed << std::setprecision(4) << report.recall_at.at(k);
    if (!report.oracle_recall_at.empty()) os << std::setw(16) << report.oracle_recall_at.at(k);
    os << '\n';
  }
  os.unsetf(std::ios::fixed);
}

namespace {

ClassScore score_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScore s;
  s.support = tp + fn;
  if (tp + fp == 0) {
    s.zero_division = true;
  } else {
    s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    s.zero_division = true;
  } else {
    s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (s.precision + s.recall == 0.0) {
    s.zero_division = s.zero_division || tp == 0;
    s.f1 = 0.0;
  } else {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

}  // namespace

F1Report adapter_f1(std::span<const supervision::OutcomeLabel> predictions,
                    std::span<const supervision::OutcomeLabel> gold) {
  if (predictions.size() != gold.size()) {
    throw DimensionMismatch("adapter_f1: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(gold.size()) + " gold labels");
  }
  if (predictions.empty()) throw InvalidArgument("adapter_f1: empty input");
  F1Report r;
  r.n = predictions.size();
  std::size_t err_tp = 0, err_fp = 0, err_fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int g = supervision::index_of(gold[i]);
    const int p = supervision::index_of(predictions[i]);
    r.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)] += 1;
    const bool ge = supervision::is_error(gold[i]);
    const bool pe = supervision::is_error(predictions[i]);
    if (ge && pe) ++err_tp;
    if (!ge && pe) ++err_fp;
    if (ge && !pe) ++err_fn;
  }
  double macro = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < 4; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    r.per_class[c] = score_from_counts(tp, fp, fn);
    macro += r.per_class[c].f1;
  }
  r.macro_f1 = macro / 4.0;
  r.error_detection = score_from_counts(err_tp, err_fp, err_fn);
  return r;
}

std::string f1_csv(const F1Report& r) {
  std::ostringstream os;
  os << "class,precision,recall,f1,support,zero_division\n";
  for (std::size_t c = 0; c < 4; ++c) {
    const auto& s = r.per_class[c];
    os << supervision::to_string(supervision::kAllLabels[c]) << ',' << fmt(s.precision) << ','
       << fmt(s.recall) << ',' << fmt(s.f1) << ',' << s.support << ',' << (s.zero_division ? 1 : 0) << '\n';
  }
  const auto& e = r.error_detection;
  os << "error_detection," << fmt(e.precision) << ',' << fmt(e.recall) << ',' << fmt(e.f1) << ','
     << e.support << ',' << (e.zero_division ? 1 : 0) << '\n';
  os << "macro,,," << fmt(r.macro_f1) << ',' << r.n << ",\n";
  return os.str();
}

double negative_gradient_norm(const num::VectorF& q, const num::VectorF& d) {
  num::Tape<double> tape;
  const num::Var qv = tape.constant(q.cast<double>());
  const num::Var dv = tape.constant(d.cast<double>());
  const num::Var s = num::dot(tape, qv, dv);
  const int label[] = {0};
  const num::Var loss = supervision::contrastive_bce_on_tape(tape, s, label);
  tape.backward(loss);
  return std::sqrt(num::squared_norm_accumulate(tape.grad(dv)));
}

std::size_t bucket_of(std::size_t rank) {
  std::size_t b = 0;
  for (std::size_t i = 0; i < kBucketStarts.size(); ++i)
    if (rank >= kBucketStarts[i]) b = i;
  return b;
}

GradientProfile gradient_profile(const encoder::DualEncoder<float>& enc,
                                 const std::vector<ProfileQuery>& queries,
                                 const std::string& sampler) {
  GradientProfile prof;
  prof.sampler = sampler;
  std::unordered_map<std::string, num::VectorF> cache;
  std::vector<std::pair<std::size_t, double>> raw;  // (bucket, magnitude)
  for (const auto& pq : queries) {
    const num::VectorF q = enc.encode(pq.text);
    for (const auto& c : pq.candidates) {
      auto it = cache.find(c.text);
      if (it == cache.end()) it = cache.emplace(c.text, enc.encode(c.text)).first;
      raw.emplace_back(bucket_of(c.base_rank), negative_gradient_norm(q, it->second));
    }
  }
  prof.pairs = raw.size();
  for (const auto& [_, g] : raw) prof.max_raw = std::max(prof.max_raw, g);

  prof.buckets.resize(kBucketStarts.size());
  for (std::size_t b = 0; b < kBucketStarts.size(); ++b) {
    prof.buckets[b].first_rank = kBucketStarts[b];
    prof.buckets[b].last_rank = b + 1 < kBucketStarts.size() ? kBucketStarts[b + 1] - 1
                                                             : std::numeric_limits<std::size_t>::max();
  }
  std::vector<double> sum(kBucketStarts.size(), 0.0), sumsq(kBucketStarts.size(), 0.0);
  for (const auto& [b, g] : raw) {
    const double v = prof.max_raw > 0.0 ? g / prof.max_raw : 0.0;
    prof.buckets[b].count += 1;
    sum[b] += v;
    sumsq[b] += v * v;
  }
  for (std::size_t b = 0; b < prof.buckets.size(); ++b) {
    auto& bk = prof.buckets[b];
    if (bk.count == 0) continue;
    const double n = static_cast<double>(bk.count);
    bk.mean = sum[b] / n;
    bk.variance = std::max(0.0, sumsq[b] / n - bk.mean * bk.mean);
  }
  return prof;
}

namespace {
std::string bucket_label(const GradientBucket& b) {
  if (b.last_rank == std::numeric_limits<std::size_t>::max()) return std::to_string(b.first_rank) + "+";
  return std::to_string(b.first_rank) + "-" + std::to_string(b.last_rank);
}
}  // namespace

std::string profile_csv(const std::vector<GradientProfile>& profiles) {
  std::ostringstream os;
  if (!profiles.empty()) os << "# normalization=" << profiles.front().normalization << '\n';
  os << "sampler,bucket,first_rank,count,mean,variance,max_raw\n";
  for (const auto& p : profiles)
    for (const auto& b : p.buckets)
      os << p.sampler << ',' << bucket_label(b) << ',' << b.first_rank << ',' << b.count << ','
         << fmt(b.mean) << ',' << fmt(b.variance) << ',' << fmt(p.max_raw) << '\n';
  return os.str();
}

void print_profiles(std::ostream& os, const std::vector<GradientProfile>& profiles) {
  os << std::setw(10) << "sampler" << std::setw(10) << "bucket" << std::setw(8) << "count"
     << std::setw(10) << "mean" << std::setw(12) << "variance" << '\n';
  for (const auto& p : profiles)
    for (const auto& b : p.buckets)
      os << std::setw(10) << p.sampler << std::setw(10) << bucket_label(b) << std::setw(8) << b.count
         << std::setw(10) << std::fixed << std::setprecision(4) << b.mean << std::setw(12) << b.variance
         << '\n';
  os.unsetf(std::ios::fixed);
}

}  // namespace rrra::eval
