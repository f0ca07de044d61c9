#include "rrra/sampling/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rrra/binary_io.hpp"
#include "rrra/encoder/similarity.hpp"
#include "rrra/supervision/losses.hpp"

namespace rrra::sampling {

SamplerKind parse_sampler(std::string_view name) {
  if (name == "random") return SamplerKind::kRandom;
  if (name == "topk") return SamplerKind::kTopK;
  if (name == "rrra") return SamplerKind::kRrra;
  throw InvalidArgument("unknown sampler '" + std::string(name) + "' (expected random|topk|rrra)");
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kRandom: return "random";
    case SamplerKind::kTopK: return "topk";
    case SamplerKind::kRrra: return "rrra";
  }
  return "?";
}

ResampleMode parse_resample_mode(std::string_view name) {
  if (name == "proportional") return ResampleMode::kProportional;
  if (name == "top_by_score") return ResampleMode::kTopByScore;
  throw InvalidArgument("unknown resample mode '" + std::string(name) + "'");
}

std::string to_string(ResampleMode mode) {
  return mode == ResampleMode::kProportional ? "proportional" : "top_by_score";
}

PairScores score_pair(const num::VectorF& q, const num::VectorF& c,
                      const adapter::Adapter<float>& adapter) {
  const auto out = adapter.adapt(q, c);
  PairScores s;
  s.s_hn = encoder::unit_interval_similarity(q, out.a);
  s.s_fn = encoder::unit_interval_similarity(out.a, c);
  s.class_probs = supervision::softmax4(out.logits);
  return s;
}

namespace {
void require_unit(double x, const char* name) {
  if (!(x >= 0.0 && x <= 1.0)) {
    throw InvalidArgument(std::string(name) + " = " + std::to_string(x) + " is outside [0, 1]");
  }
}
void require_exponent(double x, const char* name) {
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw InvalidArgument(std::string(name) + " must be finite and non-negative");
  }
}
}  // namespace

double resample_score(double s_hn, double s_fn, double gamma_rs) {
  require_unit(s_hn, "s_hn");
  require_unit(s_fn, "s_fn");
  require_exponent(gamma_rs, "gamma_rs");
  return s_hn * std::pow(1.0 - s_fn, gamma_rs);
}

double rerank_score(double s_base_unit, double s_adapter, double lambda_rr) {
  require_unit(s_base_unit, "s_base");
  require_unit(s_adapter, "s_adapter");
  require_exponent(lambda_rr, "lambda_rr");
  return s_base_unit * std::pow(s_adapter, lambda_rr);
}

void sort_by_base(std::vector<ScoredCandidate>& candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.s_base != b.s_base) return a.s_base > b.s_base;
    return a.doc_id < b.doc_id;
  });
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].rank = i;
}

std::vector<ScoredCandidate> mine_hard_negatives(const index::BruteForceIndex& index,
                                                 const num::VectorF& q, const std::string& query_id,
                                                 std::size_t k, const std::set<std::string>& exclude) {
  if (k == 0) throw InvalidArgument("mine_hard_negatives: k must be at least 1");
  const auto hits = index.search(q, std::min(index.size(), k + exclude.size()));
  std::vector<ScoredCandidate> out;
  for (const auto& h : hits) {
    if (exclude.count(h.doc_id)) continue;
    if (out.size() == k) break;
    ScoredCandidate c;
    c.query_id = query_id;
    c.doc_id = h.doc_id;
    c.row = h.row;
    c.s_base = h.score;
    c.composite = h.score;
    c.rank = out.size();
    out.push_back(std::move(c));
  }
  return out;
}

void score_candidates(std::vector<ScoredCandidate>& candidates, const num::VectorF& q,
                      const index::BruteForceIndex& index, const adapter::Adapter<float>& adapter) {
  for (auto& c : candidates) {
    const num::VectorF emb = index.row(c.row);
    const auto s = score_pair(q, emb, adapter);
    c.s_hn = s.s_hn;
    c.s_fn = s.s_fn;
    c.class_probs = s.class_probs;
  }
}

ResampleOutcome resample(const std::vector<ScoredCandidate>& candidates, double gamma_rs,
                         std::size_t m, Rng& rng, ResampleMode mode) {
  if (m > candidates.size()) {
    throw InvalidArgument("resample: m = " + std::to_string(m) + " exceeds " +
                          std::to_string(candidates.size()) + " candidates");
  }
  std::vector<double> weights(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    weights[i] = resample_score(candidates[i].s_hn, candidates[i].s_fn, gamma_rs);

  ResampleOutcome out;
  auto emit = [&](std::size_t i) {
    ScoredCandidate c = candidates[i];
    c.composite = weights[i];
    c.rank = out.picked.size();
    out.picked.push_back(std::move(c));
  };

  if (mode == ResampleMode::kTopByScore) {
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (weights[a] != weights[b]) return weights[a] > weights[b];
      return candidates[a].doc_id < candidates[b].doc_id;
    });
    for (std::size_t j = 0; j < m; ++j) emit(order[j]);
    return out;
  }

  std::vector<std::size_t> remaining(candidates.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
  for (std::size_t draw = 0; draw < m; ++draw) {
    double total = 0.0;
    for (std::size_t i : remaining) total += weights[i];
    std::size_t pos = 0;
    if (total > 0.0) {
      const double u = rng.uniform01() * total;
      double acc = 0.0;
      pos = remaining.size();
      std::size_t last_positive = 0;
      for (std::size_t j = 0; j < remaining.size(); ++j) {
        const double w = weights[remaining[j]];
        if (w <= 0.0) continue;
        last_positive = j;
        acc += w;
        if (u < acc) {
          pos = j;
          break;
        }
      }
      if (pos == remaining.size()) pos = last_positive;  // u landed on the rounding edge
    } else {
      out.uniform_fallback = true;
      pos = static_cast<std::size_t>(rng.below(remaining.size()));
    }
    emit(remaining[pos]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  return out;
}

std::vector<ScoredCandidate> rerank(std::vector<ScoredCandidate> candidates, double lambda_rr,
                                    encoder::SimilarityKind base_kind) {
  for (auto& c : candidates) {
    c.composite = rerank_score(encoder::base_score_unit(base_kind, c.s_base), c.s_hn, lambda_rr);
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.composite != b.composite) return a.composite > b.composite;
    if (a.s_base != b.s_base) return a.s_base > b.s_base;
    return a.doc_id < b.doc_id;
  });
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].rank = i;
  return candidates;
}

std::vector<ScoredCandidate> baseline_sample(SamplerKind kind,
                                             const std::vector<ScoredCandidate>& pool,
                                             std::size_t m, Rng& rng) {
  if (m > pool.size()) {
    throw InvalidArgument("baseline_sample: m = " + std::to_string(m) + " exceeds pool of " +
                          std::to_string(pool.size()));
  }
  std::vector<ScoredCandidate> out;
  if (kind == SamplerKind::kTopK) {
    out = pool;
    sort_by_base(out);
    out.resize(m);
    return out;
  }
  if (kind != SamplerKind::kRandom) throw InvalidArgument("baseline_sample: rrra is not a baseline sampler");
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
    ScoredCandidate c = pool[idx[i]];
    c.rank = i;
    out.push_back(std::move(c));
  }
  return out;
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_candidates_tsv(const std::filesystem::path& path,
                          const std::vector<ScoredCandidate>& candidates, bool with_probs) {
  std::ostringstream os;
  os << "query_id\tdoc_id\ts_base\ts_hn\ts_fn\tcomposite\trank";
  if (with_probs) os << "\tp_tp\tp_fn\tp_fp\tp_tn";
  os << '\n';
  for (const auto& c : candidates) {
    os << c.query_id << '\t' << c.doc_id << '\t' << fmt_double(c.s_base) << '\t'
       << fmt_double(c.s_hn) << '\t' << fmt_double(c.s_fn) << '\t' << fmt_double(c.composite)
       << '\t' << c.rank;
    if (with_probs)
      for (double p : c.class_probs) os << '\t' << fmt_double(p);
    os << '\n';
  }
  io::write_text_atomic(path, os.str());
}

std::vector<ScoredCandidate> read_candidates_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ScoredCandidate> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("query_id", 0) == 0)) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 7 && f.size() != 11) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 7 or 11 columns");
    }
    try {
      ScoredCandidate c;
      c.query_id = f[0];
      c.doc_id = f[1];
      c.s_base = std::stod(f[2]);
      c.s_hn = std::stod(f[3]);
      c.s_fn = std::stod(f[4]);
      c.composite = std::stod(f[5]);
      c.rank = std::stoul(f[6]);
      if (f.size() == 11)
        for (std::size_t k = 0; k < 4; ++k) c.class_probs[k] = std::stod(f[7 + k]);
      out.push_back(std::move(c));
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

}  // namespace rrra::sampling
