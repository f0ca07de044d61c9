#include "rrra/pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "rrra/binary_io.hpp"
#include "rrra/pipeline/synthetic.hpp"

namespace rrra::pipeline {

using supervision::OutcomeLabel;

namespace {

/// Token ids of every document and query, computed once per run.
class TokenCache {
 public:
  TokenCache(const data::Corpus& corpus, const encoder::DualEncoder<float>& enc) {
    for (const auto& d : corpus.documents) docs_.emplace(d.id, tokenize(enc, d.text, "document", d.id));
    for (const auto& q : corpus.queries) queries_.emplace(q.id, tokenize(enc, q.text, "query", q.id));
  }
  const std::vector<std::uint32_t>& doc(const std::string& id) const { return docs_.at(id); }
  const std::vector<std::uint32_t>& query(const std::string& id) const { return queries_.at(id); }

 private:
  static std::vector<std::uint32_t> tokenize(const encoder::DualEncoder<float>& enc, const std::string& text,
                                             const char* what, const std::string& id) {
    try {
      return enc.tokenize(text);
    } catch (const EmptyText&) {
      throw DataError(std::string(what) + " '" + id + "' has no tokens");
    }
  }
  std::unordered_map<std::string, std::vector<std::uint32_t>> docs_;
  std::unordered_map<std::string, std::vector<std::uint32_t>> queries_;
};

void say(const RunContext& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << '\n';
}

void check_loss(double loss, double limit, const RunContext& ctx, const std::string& where,
                const std::vector<std::pair<std::string, std::string>>& batch) {
  if (std::isfinite(loss) && loss <= limit) return;
  std::string dump_note;
  if (!ctx.out_dir.empty()) {
    std::ostringstream os;
    os << "# " << where << " loss=" << loss << '\n';
    for (const auto& [q, d] : batch) os << q << '\t' << d << '\n';
    const auto path = ctx.out_dir / "abort_batch.tsv";
    std::filesystem::create_directories(ctx.out_dir);
    io::write_text_atomic(path, os.str());
    dump_note = "; batch written to " + path.string();
  }
  std::ostringstream msg;
  msg << where << ": loss " << loss << " is non-finite or above " << limit << dump_note;
  throw NumericalAbort(msg.str());
}

struct BatchVars {
  std::vector<num::Var> queries;
  std::vector<num::Var> positives;
};

BatchVars encode_batch(num::Tape<float>& tape, encoder::DualEncoder<float>& enc, const TokenCache& tok,
                       std::span<const std::pair<std::string, std::string>> batch) {
  BatchVars v;
  for (const auto& [qid, did] : batch) {
    v.queries.push_back(enc.encode_on_tape(tape, tok.query(qid)));
    v.positives.push_back(enc.encode_on_tape(tape, tok.doc(did)));
  }
  return v;
}

/// Appends q_i · d_j for every pair in the batch; label 1 when d_j is relevant to q_i.
void in_batch_scores(num::Tape<float>& tape, const BatchVars& v,
                     std::span<const std::pair<std::string, std::string>> batch, const data::Qrels& relevant,
                     std::vector<num::Var>& scores, std::vector<int>& labels) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto rel = relevant.find(batch[i].first);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      scores.push_back(num::dot(tape, v.queries[i], v.positives[j]));
      const bool pos = j == i || (rel != relevant.end() && rel->second.count(batch[j].second));
      labels.push_back(pos ? 1 : 0);
    }
  }
}

std::vector<num::Parameter<float>*> encoder_params(encoder::DualEncoder<float>& enc) { return enc.parameters(); }

std::vector<std::vector<float>> snapshot(const encoder::DualEncoder<float>& enc) {
  std::vector<std::vector<float>> out;
  for (const auto* p : enc.parameters())
    out.emplace_back(p->value.data(), p->value.data() + p->value.size());
  return out;
}

bool same_bits(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) != 0)
      return false;
  return true;
}

adapter::AdapterFlags flags_of(const Config& cfg) {
  return {cfg.stage2.use_residual, cfg.stage2.use_linear_norm, cfg.stage2.use_context_init};
}

encoder::SimilarityKind kind_of(const Config& cfg) { return encoder::parse_similarity(cfg.encoder.similarity); }

num::AdamWConfig adamw(double lr, double wd, std::uint64_t warmup) {
  num::AdamWConfig c;
  c.lr = lr;
  c.weight_decay = wd;
  c.warmup_steps = warmup;
  return c;
}

}  // namespace

Model make_model(const Config& cfg) {
  Model m{encoder::DualEncoder<float>(static_cast<std::uint32_t>(cfg.encoder.buckets),
                                      static_cast<int>(cfg.encoder.dim), cfg.encoder.use_projection),
          std::nullopt, {}, StageTag::kInit};
  m.encoder.initialize(cfg.seed);
  return m;
}

Checkpoint to_checkpoint(const Model& model, std::uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.stage = model.stage;
  auto enc = model.encoder.parameters();
  if (!model.encoder.use_projection()) enc.resize(1);
  store_parameters(c, enc);
  if (model.adapter) {
    store_parameters(c, model.adapter->parameters());
    const auto& f = model.adapter->flags();
    c.put("adapter.flags", num::Tensor({3}, {f.use_residual ? 1.f : 0.f, f.use_linear_norm ? 1.f : 0.f,
                                             f.use_context_init ? 1.f : 0.f}));
    std::vector<float> w(model.class_weights.w.begin(), model.class_weights.w.end());
    c.put("adapter.class_weights", num::Tensor({4}, std::move(w)));
    c.put("adapter.gamma_imb", num::Tensor({1}, {static_cast<float>(model.class_weights.gamma_imb)}));
  }
  return c;
}

Model from_checkpoint(const Config& cfg, const Checkpoint& ckpt) {
  Model m = make_model(cfg);
  auto enc_params = m.encoder.parameters();
  // Validate the adapter records before touching any parameter.
  std::optional<adapter::Adapter<float>> ad;
  if (const auto* trunk = ckpt.find("adapter.trunk.weight")) {
    const auto& fl = ckpt.at("adapter.flags");
    const auto& cw = ckpt.at("adapter.class_weights");
    if (fl.size() != 3 || cw.size() != 4 || trunk->rank() != 2)
      throw DataError("checkpoint adapter metadata has unexpected shape");
    adapter::AdapterFlags flags{fl.data[0] != 0.f, fl.data[1] != 0.f, fl.data[2] != 0.f};
    ad.emplace(static_cast<int>(cfg.encoder.dim), static_cast<int>(trunk->dims[0]), flags);
    for (std::size_t i = 0; i < 4; ++i) m.class_weights.w[i] = cw.data[i];
    if (const auto* g = ckpt.find("adapter.gamma_imb")) m.class_weights.gamma_imb = g->data.at(0);
  }
  std::vector<num::Parameter<float>*> all(enc_params.begin(), enc_params.end());
  if (ad)
    for (auto* p : ad->parameters()) all.push_back(p);
  restore_parameters(ckpt, all);
  m.adapter = std::move(ad);
  m.stage = ckpt.stage;
  return m;
}

std::vector<std::pair<std::string, std::string>> positive_pairs(const data::Corpus& corpus, data::Split split) {
  const auto rel = corpus.relevant();
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto* q : corpus.queries_in(split)) {
    auto it = rel.find(q->id);
    if (it == rel.end()) continue;
    for (const auto& d : it->second) out.emplace_back(q->id, d);
  }
  return out;
}

TrainLog train_in_batch(encoder::DualEncoder<float>& enc, const data::Corpus& corpus,
                        const std::vector<std::pair<std::string, std::string>>& pairs, const InBatchPlan& plan,
                        std::uint64_t seed, double abort_loss, const RunContext& ctx) {
  if (pairs.empty()) throw DataError("no training pairs");
  if (plan.batch == 0 || plan.accumulation == 0) throw InvalidArgument("batch and accumulation must be positive");
  const TokenCache tok(corpus, enc);
  const auto relevant = corpus.relevant();
  auto params = encoder_params(enc);
  auto state = num::make_adamw_state<float>(plan.optimizer, params);

  TrainLog log;
  std::vector<std::size_t> order(pairs.size());
  for (std::uint64_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, plan.stream + ".shuffle", epoch));
    rng.shuffle(order);
    std::vector<std::pair<std::string, std::string>> shuffled;
    for (auto i : order) shuffled.push_back(pairs[i]);

    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    const std::size_t per_step = plan.batch * plan.accumulation;
    for (std::size_t start = 0; start < shuffled.size(); start += per_step) {
      const std::size_t end = std::min(shuffled.size(), start + per_step);
      const std::size_t n_micro = (end - start + plan.batch - 1) / plan.batch;
      enc.zero_grad();
      double step_loss = 0.0;
      for (std::size_t mb = 0; mb < n_micro; ++mb) {
        const std::size_t lo = start + mb * plan.batch;
        const std::size_t hi = std::min(end, lo + plan.batch);
        const std::span<const std::pair<std::string, std::string>> batch(shuffled.data() + lo, hi - lo);
        num::Tape<float> tape;
        const BatchVars v = encode_batch(tape, enc, tok, batch);
        std::vector<num::Var> scores;
        std::vector<int> labels;
        in_batch_scores(tape, v, batch, relevant, scores, labels);
        const num::Var loss = supervision::contrastive_bce_on_tape(tape, num::stack<float>(tape, scores), labels);
        const double value = tape.scalar_value(loss);
        check_loss(value, abort_loss, ctx, plan.stream, {batch.begin(), batch.end()});
        tape.backward(num::scale(tape, loss, 1.0f / static_cast<float>(n_micro)));
        step_loss += value / static_cast<double>(n_micro);
      }
      if (log.step_loss.empty()) log.initial_loss = step_loss;
      num::adamw_step<float>(state, params);
      log.step_loss.push_back(step_loss);
      epoch_sum += step_loss;
      ++epoch_steps;
    }
    log.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(epoch_steps, 1)));
    say(ctx, plan.stream + " epoch " + std::to_string(epoch + 1) + "/" + std::to_string(plan.epochs) +
                 " loss " + std::to_string(log.epoch_loss.back()));
  }
  return log;
}

Stage1Result stage1_pretrain(const Config& cfg, const data::Corpus& corpus, const RunContext& ctx) {
  const auto pairs = positive_pairs(corpus, data::Split::kTrain);
  if (pairs.empty()) throw DataError("stage1: the train split has no labeled pairs");
  Stage1Result r{make_model(cfg), {}};
  InBatchPlan plan;
  plan.batch = cfg.stage1.batch;
  plan.accumulation = 1;
  plan.epochs = cfg.stage1.epochs;
  plan.optimizer = adamw(cfg.stage1.lr, cfg.stage1.weight_decay, cfg.stage1.warmup_steps);
  plan.stream = "stage1";
  if (plan.epochs > 0) r.log = train_in_batch(r.model.encoder, corpus, pairs, plan, cfg.seed, cfg.abort_loss, ctx);
  r.model.stage = StageTag::kStage1;
  return r;
}

std::vector<AdapterPair> build_adapter_pairs(const Config& cfg, const data::Corpus& corpus,
                                             const encoder::DualEncoder<float>& enc,
                                             const index::BruteForceIndex& index, data::Split split,
                                             std::uint64_t seed) {
  const auto relevant = corpus.relevant();
  std::vector<AdapterPair> out;
  const auto queries = corpus.queries_in(split);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto* q = queries[qi];
    auto it = relevant.find(q->id);
    if (it == relevant.end()) continue;
    const num::VectorF qv = enc.encode(q->text);
    auto make = [&](const std::string& doc_id, std::size_t row, int gold) {
      AdapterPair p;
      p.query_id = q->id;
      p.doc_id = doc_id;
      p.gold = gold;
      p.q = qv;
      p.c = index.row(row);
      p.score = num::dot_accumulate(p.q, p.c);
      p.label = supervision::derive_outcome(gold, p.score, cfg.stage2.tau);
      return p;
    };
    for (const auto& d : it->second) out.push_back(make(d, index.row_of(d), 1));
    const auto pool = sampling::mine_hard_negatives(index, qv, q->id, cfg.stage2.pool, it->second);
    const std::size_t want = std::min<std::size_t>(pool.size(), cfg.stage2.negatives_per_positive * it->second.size());
    Rng rng(derive_seed(seed, "stage2.pairs." + data::to_string(split), qi));
    for (const auto& c : sampling::baseline_sample(sampling::SamplerKind::kRandom, pool, want, rng))
      out.push_back(make(c.doc_id, c.row, 0));
  }
  return out;
}

std::vector<OutcomeLabel> predict_labels(const adapter::Adapter<float>& ad, const std::vector<AdapterPair>& pairs) {
  std::vector<OutcomeLabel> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(supervision::argmax_label(ad.adapt(p.q, p.c).logits));
  return out;
}

namespace {

/// Adapter objective for one pair on the tape: w·CE + dir_weight·w·L_dir, plus
/// norm_weight·L_norm when `norm_weight` > 0.
num::Var adapter_term(num::Tape<float>& tape, adapter::Adapter<float>& ad, num::Var q, num::Var c,
                      OutcomeLabel label, const supervision::ClassWeights& w, double dir_weight,
                      double norm_weight) {
  const auto out = ad.adapt_on_tape(tape, q, c);
  const double wl = w[label];
  num::Var total = supervision::weighted_ce_on_tape(tape, out.logits, label, wl);
  if (dir_weight > 0.0) {
    const num::Var dir = adapter::directional_loss_on_tape(tape, out.a, q, c, supervision::is_gold_positive(label));
    total = num::add(tape, total, num::scale(tape, dir, static_cast<float>(dir_weight * wl)));
  }
  if (norm_weight > 0.0) {
    const num::Var norm = adapter::norm_loss_on_tape(tape, out.a, q, c);
    total = num::add(tape, total, num::scale(tape, norm, static_cast<float>(norm_weight)));
  }
  return total;
}

}  // namespace

Stage2Result stage2_train_adapter(const Config& cfg, const data::Corpus& corpus, Model model,
                                  const RunContext& ctx) {
  const auto frozen = snapshot(model.encoder);
  const auto kind = kind_of(cfg);
  const auto index = index::build_index(corpus.documents, model.encoder, kind);
  auto train = build_adapter_pairs(cfg, corpus, model.encoder, index, data::Split::kTrain, cfg.seed);
  const auto dev = build_adapter_pairs(cfg, corpus, model.encoder, index, data::Split::kDev, cfg.seed);
  if (train.empty()) throw DataError("stage2: no training pairs (empty train split?)");

  Stage2Result r{std::move(model), {}, {}, {}, {}, OutcomeLabel::kTN, 0.0, 0.0, false};
  for (const auto& p : train) r.train_counts[static_cast<std::size_t>(supervision::index_of(p.label))] += 1;
  const auto present = std::count_if(r.train_counts.begin(), r.train_counts.end(), [](auto n) { return n > 0; });
  if (present <= 1) {
    r.degenerate_labels = true;
    say(ctx, "warning: stage2 training labels hold a single class; class weights fall back to the max(count, 1) guard");
  }
  const auto weights = supervision::class_weights(r.train_counts, cfg.stage2.gamma_imb);
  {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 4; ++i)
      if (r.train_counts[i] > r.train_counts[best]) best = i;
    r.majority = supervision::kAllLabels[best];
  }

  adapter::Adapter<float> ad(static_cast<int>(cfg.encoder.dim), static_cast<int>(cfg.stage2.hidden), flags_of(cfg));
  ad.initialize(cfg.seed);
  {
    double ce = 0.0;
    for (const auto& p : train) {
      const num::Vector<double> logits = ad.adapt(p.q, p.c).logits.cast<double>();
      const std::array<double, 4> l{logits(0), logits(1), logits(2), logits(3)};
      ce += supervision::weighted_ce(l, p.label, supervision::ClassWeights{});
    }
    r.initial_ce = ce / static_cast<double>(train.size());
  }

  auto params = ad.parameters();
  auto state = num::make_adamw_state<float>(adamw(cfg.stage2.lr, cfg.stage2.weight_decay, cfg.stage2.warmup_steps), params);
  const double norm_weight = cfg.stage2.use_linear_norm ? cfg.stage2.norm_weight : 0.0;
  std::vector<std::size_t> order(train.size());
  for (std::uint64_t epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "stage2.shuffle", epoch));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.stage2.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.stage2.batch);
      ad.zero_grad();
      num::Tape<float> tape;
      std::vector<num::Var> terms;
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = train[order[k]];
        const num::Var q = tape.constant(p.q);
        const num::Var c = tape.constant(p.c);
        terms.push_back(adapter_term(tape, ad, q, c, p.label, weights, cfg.stage2.dir_weight, norm_weight));
      }
      const num::Var loss = num::mean<float>(tape, terms);
      const double value = tape.scalar_value(loss);
      if (!(std::isfinite(value) && value <= cfg.abort_loss)) {
        std::vector<std::pair<std::string, std::string>> dump;
        for (std::size_t k = start; k < end; ++k) dump.emplace_back(train[order[k]].query_id, train[order[k]].doc_id);
        check_loss(value, cfg.abort_loss, ctx, "stage2", dump);
      }
      tape.backward(loss);
      num::adamw_step<float>(state, params);
      if (r.log.step_loss.empty()) r.log.initial_loss = value;
      r.log.step_loss.push_back(value);
      epoch_sum += value;
      ++steps;
    }
    r.log.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(steps, 1)));
    say(ctx, "stage2 epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.stage2.epochs) + " loss " +
                 std::to_string(r.log.epoch_loss.back()));
  }
  if (!same_bits(frozen, snapshot(r.model.encoder)))
    throw std::logic_error("stage2 modified encoder parameters");

  if (!dev.empty()) {
    std::vector<OutcomeLabel> gold;
    for (const auto& p : dev) gold.push_back(p.label);
    const auto pred = predict_labels(ad, dev);
    r.dev_f1 = eval::adapter_f1(pred, gold);
    const std::vector<OutcomeLabel> majority(dev.size(), r.majority);
    r.majority_f1 = eval::adapter_f1(majority, gold);
    const auto oracle = corpus.oracle_relevant();
    std::vector<OutcomeLabel> oracle_gold;
    for (const auto& p : dev) {
      auto it = oracle.find(p.query_id);
      const int g = it != oracle.end() && it->second.count(p.doc_id) ? 1 : 0;
      oracle_gold.push_back(supervision::derive_outcome(g, p.score, cfg.stage2.tau));
    }
    r.oracle_error_f1 = eval::adapter_f1(pred, oracle_gold).error_detection.f1;
  }
  r.model.adapter = std::move(ad);
  r.model.class_weights = weights;
  r.model.stage = StageTag::kStage2;
  return r;
}

Stage3Result stage3_joint_finetune(const Config& cfg, const data::Corpus& corpus, Model model,
                                   const RunContext& ctx) {
  if (!model.adapter) throw DataError("stage3 needs a checkpoint that contains an adapter (run stage2 first)");
  if (cfg.stage3.batch * cfg.stage3.accumulation != cfg.stage3.effective_batch)
    throw InvalidArgument("stage3: batch x accumulation must equal effective_batch");
  const auto pairs = positive_pairs(corpus, data::Split::kTrain);
  if (pairs.empty()) throw DataError("stage3: the train split has no labeled pairs");

  Stage3Result r{std::move(model), {}, 0, 0};
  auto& enc = r.model.encoder;
  auto& ad = *r.model.adapter;
  const auto weights = r.model.class_weights;
  const TokenCache tok(corpus, enc);
  const auto relevant = corpus.relevant();
  const auto kind = kind_of(cfg);
  const auto sampler = sampling::parse_sampler(cfg.stage3.sampler);
  const auto mode = sampling::parse_resample_mode(cfg.stage3.resample_mode);
  const std::size_t m = cfg.stage3.hard_negatives;
  const double lambda = cfg.stage3.lambda;

  // Candidate pools, mined once with the encoder as it enters stage 3.
  std::unordered_map<std::string, std::vector<sampling::ScoredCandidate>> pools;
  std::optional<index::BruteForceIndex> mined;
  if (m > 0) {
    mined.emplace(index::build_index(corpus.documents, enc, kind));
    for (const auto& [qid, _] : pairs) {
      if (pools.count(qid)) continue;
      const auto& gold = relevant.at(qid);
      const num::VectorF qv = enc.encode_ids(tok.query(qid));
      if (sampler == sampling::SamplerKind::kRandom) {
        std::vector<sampling::ScoredCandidate> all;
        for (std::size_t row = 0; row < mined->size(); ++row) {
          if (gold.count(mined->doc_ids()[row])) continue;
          sampling::ScoredCandidate c;
          c.query_id = qid;
          c.doc_id = mined->doc_ids()[row];
          c.row = row;
          c.rank = all.size();
          all.push_back(std::move(c));
        }
        pools.emplace(qid, std::move(all));
      } else {
        pools.emplace(qid, sampling::mine_hard_negatives(*mined, qv, qid, cfg.stage3.pool, gold));
      }
      if (pools.at(qid).size() < m)
        throw DataError("stage3: query '" + qid + "' has fewer than " + std::to_string(m) + " negative candidates");
    }
  }

  auto enc_params = encoder_params(enc);
  auto ad_params = ad.parameters();
  auto enc_state = num::make_adamw_state<float>(adamw(cfg.stage3.lr, cfg.stage3.weight_decay, cfg.stage3.warmup_steps), enc_params);
  auto ad_state = num::make_adamw_state<float>(adamw(cfg.stage3.adapter_lr, cfg.stage3.weight_decay, cfg.stage3.warmup_steps), ad_params);

  std::vector<std::size_t> order(pairs.size());
  for (std::uint64_t epoch = 0; epoch < cfg.stage3.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "stage3.shuffle", epoch));
    shuffle_rng.shuffle(order);
    std::vector<std::pair<std::string, std::string>> shuffled;
    for (auto i : order) shuffled.push_back(pairs[i]);

    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    const std::size_t per_step = cfg.stage3.batch * cfg.stage3.accumulation;
    for (std::size_t start = 0; start < shuffled.size(); start += per_step) {
      const std::size_t end = std::min(shuffled.size(), start + per_step);
      const std::size_t n_micro = (end - start + cfg.stage3.batch - 1) / cfg.stage3.batch;
      enc.zero_grad();
      ad.zero_grad();
      double step_loss = 0.0;
      for (std::size_t mb = 0; mb < n_micro; ++mb) {
        const std::size_t lo = start + mb * cfg.stage3.batch;
        const std::size_t hi = std::min(end, lo + cfg.stage3.batch);
        const std::span<const std::pair<std::string, std::string>> batch(shuffled.data() + lo, hi - lo);
        num::Tape<float> tape;
        const BatchVars v = encode_batch(tape, enc, tok, batch);
        std::vector<num::Var> scores;
        std::vector<int> labels;
        in_batch_scores(tape, v, batch, relevant, scores, labels);

        // Hard negatives per query.
        std::vector<std::vector<std::pair<std::string, num::Var>>> negatives(batch.size());
        if (m > 0) {
          for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& pool = pools.at(batch[i].first);
            Rng rng(derive_seed(cfg.seed, "stage3.resample." + std::to_string(epoch), order[lo + i]));
            std::vector<sampling::ScoredCandidate> picked;
            if (sampler == sampling::SamplerKind::kRrra) {
              std::vector<sampling::ScoredCandidate> scored = pool;
              const num::VectorF qv = tape.value(v.queries[i]);
              for (auto& c : scored) {
                const num::VectorF cv = enc.encode_ids(tok.doc(c.doc_id));
                const auto s = sampling::score_pair(qv, cv, ad);
                c.s_hn = s.s_hn;
                c.s_fn = s.s_fn;
              }
              auto outcome = sampling::resample(scored, cfg.stage3.gamma_rs, m, rng, mode);
              r.resample_calls += 1;
              if (outcome.uniform_fallback) r.uniform_fallbacks += 1;
              picked = std::move(outcome.picked);
            } else {
              picked = sampling::baseline_sample(sampler, pool, m, rng);
            }
            for (const auto& c : picked) {
              const num::Var nv = enc.encode_on_tape(tape, tok.doc(c.doc_id));
              negatives[i].emplace_back(c.doc_id, nv);
              scores.push_back(num::dot(tape, v.queries[i], nv));
              labels.push_back(0);
            }
          }
        }
        num::Var loss = supervision::contrastive_bce_on_tape(tape, num::stack<float>(tape, scores), labels);
        if (lambda > 0.0) {
          std::vector<num::Var> terms;
          auto add_term = [&](num::Var q, num::Var c, int gold) {
            const double s = num::dot_accumulate(tape.value(q), tape.value(c));
            const auto label = supervision::derive_outcome(gold, s, cfg.stage2.tau);
            terms.push_back(adapter_term(tape, ad, q, c, label, weights, cfg.stage3.dir_weight, 0.0));
          };
          for (std::size_t i = 0; i < batch.size(); ++i) {
            add_term(v.queries[i], v.positives[i], 1);
            for (const auto& [_, nv] : negatives[i]) add_term(v.queries[i], nv, 0);
          }
          const num::Var l_adapter = num::mean<float>(tape, terms);
          loss = num::add(tape, loss, num::scale(tape, l_adapter, static_cast<float>(lambda)));
        }
        const double value = tape.scalar_value(loss);
        check_loss(value, cfg.abort_loss, ctx, "stage3", {batch.begin(), batch.end()});
        tape.backward(num::scale(tape, loss, 1.0f / static_cast<float>(n_micro)));
        step_loss += value / static_cast<double>(n_micro);
      }
      if (r.log.step_loss.empty()) r.log.initial_loss = step_loss;
      num::adamw_step<float>(enc_state, enc_params);
      num::adamw_step<float>(ad_state, ad_params);
      r.log.step_loss.push_back(step_loss);
      epoch_sum += step_loss;
      ++epoch_steps;
    }
    r.log.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(epoch_steps, 1)));
    say(ctx, "stage3 epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.stage3.epochs) + " loss " +
                 std::to_string(r.log.epoch_loss.back()));
  }
  if (r.uniform_fallbacks > 0)
    say(ctx, "warning: resampling fell back to uniform draws " + std::to_string(r.uniform_fallbacks) + " of " +
                 std::to_string(r.resample_calls) + " times (every resample score was zero)");
  r.model.stage = StageTag::kStage3;
  return r;
}

std::string to_string(EvalMode mode) { return mode == EvalMode::kBase ? "base" : "rerank"; }

EvalOutput run_eval(const Config& cfg, const data::Corpus& corpus, const Model& model, EvalMode mode) {
  if (mode == EvalMode::kRerank && !model.adapter)
    throw DataError("rerank needs a checkpoint with an adapter (stage2 or stage3)");
  const auto kind = kind_of(cfg);
  const auto index = index::build_index(corpus.documents, model.encoder, kind);
  const auto split = data::parse_split(cfg.eval.split);
  const auto ks = cfg.ks();
  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());
  const std::size_t depth = std::max<std::size_t>(max_k, cfg.eval.rerank_depth);

  EvalOutput out;
  for (const auto* q : corpus.queries_in(split)) {
    num::VectorF qv;
    try {
      qv = model.encoder.encode(q->text);
    } catch (const EmptyText&) {
      throw DataError("query '" + q->id + "' has no tokens");
    }
    const auto hits = index.search(qv, depth, static_cast<unsigned>(cfg.eval.threads));
    std::vector<std::string> ranked;
    if (mode == EvalMode::kBase) {
      for (const auto& h : hits) ranked.push_back(h.doc_id);
    } else {
      const std::size_t head_n = std::min<std::size_t>(hits.size(), cfg.eval.rerank_depth);
      std::vector<sampling::ScoredCandidate> head;
      for (std::size_t i = 0; i < head_n; ++i) {
        sampling::ScoredCandidate c;
        c.query_id = q->id;
        c.doc_id = hits[i].doc_id;
        c.row = hits[i].row;
        c.s_base = hits[i].score;
        c.rank = i;
        head.push_back(std::move(c));
      }
      sampling::score_candidates(head, qv, index, *model.adapter);
      head = sampling::rerank(std::move(head), cfg.eval.lambda_rr, kind);
      for (const auto& c : head) ranked.push_back(c.doc_id);
      for (std::size_t i = head_n; i < hits.size(); ++i) ranked.push_back(hits[i].doc_id);
      out.candidates.insert(out.candidates.end(), head.begin(), head.end());
    }
    out.ranking.emplace(q->id, std::move(ranked));
  }
  out.report = eval::recall_at_k(out.ranking, corpus.relevant(), ks);
  eval::add_oracle_recall(out.report, out.ranking, corpus.oracle_relevant());
  auto& md = out.report.metadata;
  md["config_hash"] = hex64(cfg.hash());
  md["seed"] = std::to_string(cfg.seed);
  md["mode"] = to_string(mode);
  md["split"] = cfg.eval.split;
  md["stage"] = to_string(model.stage);
  md["similarity"] = cfg.encoder.similarity;
  std::ostringstream lam;
  lam << cfg.eval.lambda_rr;
  md["lambda_rr"] = lam.str();
  md["rerank_depth"] = std::to_string(cfg.eval.rerank_depth);
  return out;
}

std::vector<eval::ProfileQuery> profile_inputs(const Config& cfg, const data::Corpus& corpus,
                                               const encoder::DualEncoder<float>& reference) {
  const auto kind = kind_of(cfg);
  const auto index = index::build_index(corpus.documents, reference, kind);
  const auto relevant = corpus.relevant();
  std::unordered_map<std::string, const std::string*> text;
  for (const auto& d : corpus.documents) text.emplace(d.id, &d.text);
  std::vector<eval::ProfileQuery> out;
  for (const auto& q : corpus.queries) {
    if (out.size() >= cfg.profile.queries) break;
    auto it = relevant.find(q.id);
    if (it == relevant.end()) continue;
    const auto cands = sampling::mine_hard_negatives(index, reference.encode(q.text), q.id,
                                                     cfg.profile.candidates, it->second);
    eval::ProfileQuery pq;
    pq.text = q.text;
    for (const auto& c : cands) pq.candidates.push_back({c.rank, *text.at(c.doc_id)});
    out.push_back(std::move(pq));
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& out_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : out_dir / path;
}

data::Corpus load_or_generate_corpus(const Config& cfg, const std::filesystem::path& out_dir,
                                     bool generate_if_missing) {
  const auto dir = resolve(out_dir, cfg.data.dir);
  if (std::filesystem::exists(dir / "documents.jsonl")) return data::load_corpus(dir);
  if (!generate_if_missing) throw DataError("data directory not found or empty: " + dir.string());
  SyntheticSpec spec;
  spec.n_clusters = cfg.data.n_clusters;
  spec.docs_per_cluster = cfg.data.docs_per_cluster;
  spec.queries_per_cluster = cfg.data.queries_per_cluster;
  spec.planted_fn_rate = cfg.data.planted_fn_rate;
  spec.vocab_style = cfg.data.vocab_style;
  spec.seed = cfg.seed;
  spec.train_frac = cfg.data.train_frac;
  spec.dev_frac = cfg.data.dev_frac;
  auto corpus = generate_synthetic(spec);
  data::save_corpus(corpus, dir);
  return corpus;
}

}  // namespace rrra::pipeline
