#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rrra/binary_io.hpp"
#include "rrra/error.hpp"
#include "rrra/pipeline/checkpoint.hpp"
#include "rrra/pipeline/config.hpp"
#include "rrra/pipeline/runner.hpp"
#include "rrra/pipeline/stages.hpp"
#include "rrra/pipeline/synthetic.hpp"

using namespace rrra;
using namespace rrra::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rrra_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// 5 clusters x 20 docs, 4 queries each: 100 docs, 20 queries.
Config small_config(std::uint64_t seed = 1) {
  Config c;
  c.seed = seed;
  c.data.n_clusters = 5;
  c.data.docs_per_cluster = 20;
  c.data.queries_per_cluster = 4;
  c.encoder.dim = 16;
  c.encoder.buckets = 1024;
  c.stage1.epochs = 2;
  c.stage1.warmup_steps = 0;
  c.stage2.epochs = 2;
  c.stage2.hidden = 16;
  c.stage2.pool = 32;
  c.stage3.epochs = 2;
  c.stage3.batch = 8;
  c.stage3.accumulation = 2;
  c.stage3.effective_batch = 16;
  c.stage3.pool = 16;
  c.eval.rerank_depth = 20;
  c.eval.ks = {1, 5, 10};
  c.profile.queries = 5;
  c.profile.candidates = 20;
  return c;
}

data::Corpus small_corpus(std::uint64_t seed = 42) {
  SyntheticSpec s;
  s.n_clusters = 5;
  s.docs_per_cluster = 20;
  s.queries_per_cluster = 4;
  s.seed = seed;
  return generate_synthetic(s);
}

RunContext quiet() { return RunContext{scratch("ctx"), nullptr}; }

bool same_encoder(const encoder::DualEncoder<float>& a, const encoder::DualEncoder<float>& b) {
  return a.table().value == b.table().value && a.projection().value == b.projection().value;
}

}  // namespace

TEST_CASE("toml subset parsing") {
  const auto t = parse_toml(
      "# comment\n"
      "[run]\nseed = 7\n"
      "[stage3]\nlambda = 0.25  # trailing\nsampler = \"topk\"\n"
      "[eval]\nks = [1, 5, 10]\n"
      "[stage2]\nuse_residual = false\n");
  Config c;
  c.apply(t);
  CHECK(c.seed == 7);
  CHECK(c.stage3.lambda == 0.25);
  CHECK(c.stage3.sampler == "topk");
  CHECK(c.ks() == std::vector<std::size_t>{1, 5, 10});
  CHECK_FALSE(c.stage2.use_residual);
  CHECK_THROWS_AS(parse_toml("[run]\nseed = {a = 1}\n"), DataError);
  CHECK_THROWS_AS(parse_toml("seed 7\n"), DataError);
  CHECK_THROWS_AS(c.set("stage9.lr", "1"), InvalidArgument);
  CHECK_THROWS_AS(c.set("stage1.epochs", "many"), InvalidArgument);
}

TEST_CASE("config defaults, rendering and validation") {
  Config c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.stage3.batch * c.stage3.accumulation == c.stage3.effective_batch);
  CHECK(c.stage3.effective_batch == 128);
  CHECK(c.stage2.gamma_imb == 0.3);
  CHECK(c.stage2.negatives_per_positive == 15);
  CHECK(c.stage3.hard_negatives == 4);

  Config back;
  back.apply(parse_toml(c.to_toml()));
  CHECK(back.to_toml() == c.to_toml());
  CHECK(back.hash() == c.hash());
  back.stage3.lambda = 0.75;
  CHECK(back.hash() != c.hash());

  Config bad = c;
  bad.stage3.accumulation = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = c;
  bad.stage2.tau = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = c;
  bad.stage1.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  encoder::DualEncoder<float> enc(64, 4);
  enc.initialize(5);
  Checkpoint ck;
  ck.config_hash = 0x1234;
  ck.stage = StageTag::kStage1;
  auto params = enc.parameters();
  std::vector<const num::Parameter<float>*> cparams(params.begin(), params.end());
  store_parameters(ck, cparams);
  const auto bytes = serialize(ck);
  const auto back = deserialize(bytes, "memory");
  CHECK(serialize(back) == bytes);
  CHECK(back.config_hash == 0x1234);
  CHECK(back.stage == StageTag::kStage1);
  CHECK(std::string(bytes.data(), 8) == "RRRACKPT");

  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "a.ckpt", ck);
  CHECK(io::read_file(dir / "a.ckpt") == bytes);

  encoder::DualEncoder<float> other(64, 4);
  other.initialize(6);
  auto oparams = other.parameters();
  restore_parameters(load_checkpoint(dir / "a.ckpt"), oparams);
  CHECK(same_encoder(enc, other));
}

TEST_CASE("corrupted checkpoints are rejected without partial load") {
  encoder::DualEncoder<float> enc(64, 4);
  enc.initialize(5);
  Checkpoint ck;
  auto params = enc.parameters();
  std::vector<const num::Parameter<float>*> cparams(params.begin(), params.end());
  store_parameters(ck, cparams);
  const auto bytes = serialize(ck);

  auto flipped = bytes;
  flipped[0] = 'X';
  CHECK_THROWS_AS(deserialize(flipped, "magic"), DataError);
  flipped = bytes;
  flipped[8] = 9;  // version
  CHECK_THROWS_AS(deserialize(flipped, "version"), DataError);
  flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(deserialize(flipped, "payload"), DataError);
  CHECK_THROWS_AS(deserialize(std::vector<char>(bytes.begin(), bytes.begin() + 20), "truncated"), DataError);

  const auto dir = scratch("ckpt_missing");
  try {
    load_checkpoint(dir / "nope.ckpt");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("nope.ckpt") != std::string::npos);
  }

  // Shape mismatch: the smaller encoder is left untouched.
  encoder::DualEncoder<float> small(32, 4);
  small.initialize(1);
  const auto before = small.table().value;
  auto sparams = small.parameters();
  CHECK_THROWS_AS(restore_parameters(ck, sparams), DataError);
  CHECK(small.table().value == before);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec s;
  s.n_clusters = 4;
  s.docs_per_cluster = 10;
  s.queries_per_cluster = 2;
  s.planted_fn_rate = 0.2;
  CHECK(hidden_per_query(s) == 2);
  const auto c = generate_synthetic(s);
  CHECK_NOTHROW(c.validate());
  CHECK(c.documents.size() == 40);
  CHECK(c.queries.size() == 8);
  const auto hidden = c.hidden_relevant();
  CHECK(hidden.size() == 8);
  for (const auto& [q, docs] : hidden) CHECK(docs.size() == 2);
  const auto rel = c.relevant();
  for (const auto& [q, docs] : rel) {
    CHECK(docs.size() == 1);
    for (const auto& d : docs) CHECK(hidden.at(q).count(d) == 0);
  }

  s.planted_fn_rate = 0.0;
  CHECK(generate_synthetic(s).hidden_qrels.empty());

  s.planted_fn_rate = 0.2;
  const auto again = generate_synthetic(s);
  CHECK(again.documents.size() == c.documents.size());
  bool same = true;
  for (std::size_t i = 0; i < c.documents.size(); ++i)
    same = same && c.documents[i].text == again.documents[i].text && c.documents[i].id == again.documents[i].id;
  CHECK(same);
  CHECK(again.splits == c.splits);

  s.planted_fn_rate = 0.95;
  CHECK_THROWS_AS(generate_synthetic(s), InvalidArgument);
  s.planted_fn_rate = 0.5;  // 2 * (1 + 5) > 10
  CHECK_THROWS_AS(generate_synthetic(s), InvalidArgument);
  s.planted_fn_rate = 0.2;
  s.n_clusters = 0;
  CHECK_THROWS_AS(generate_synthetic(s), InvalidArgument);
}

TEST_CASE("corpus save and load round trip") {
  const auto c = small_corpus();
  const auto dir = scratch("corpus");
  data::save_corpus(c, dir);
  const auto back = data::load_corpus(dir);
  CHECK(back.documents.size() == c.documents.size());
  CHECK(back.relevant() == c.relevant());
  CHECK(back.hidden_relevant() == c.hidden_relevant());
  CHECK(back.splits == c.splits);
  CHECK_THROWS_AS(data::load_corpus(dir / "missing"), DataError);
}

TEST_CASE("stage 1: one update lowers the training loss on 5 seeds") {
  const auto corpus = small_corpus();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = small_config(seed);
    const auto r = stage1_pretrain(cfg, corpus, quiet());
    // 14 train pairs fit in one batch, so step 2 measures the loss after one update.
    REQUIRE(r.log.step_loss.size() == 2);
    CHECK(r.log.step_loss[1] < r.log.step_loss[0]);
    CHECK(r.log.initial_loss == r.log.step_loss[0]);
  }
}

TEST_CASE("stage 1: zero epochs is the initialization; same seed is bit-identical") {
  const auto corpus = small_corpus();
  auto cfg = small_config(3);
  cfg.stage1.epochs = 0;
  const auto zero = stage1_pretrain(cfg, corpus, quiet());
  CHECK(same_encoder(zero.model.encoder, make_model(cfg).encoder));

  cfg.stage1.epochs = 2;
  const auto a = stage1_pretrain(cfg, corpus, quiet());
  const auto b = stage1_pretrain(cfg, corpus, quiet());
  CHECK(serialize(to_checkpoint(a.model, cfg.hash())) == serialize(to_checkpoint(b.model, cfg.hash())));
  CHECK_FALSE(same_encoder(a.model.encoder, zero.model.encoder));
}

TEST_CASE("stage 2: encoder frozen, uniform initial CE") {
  const auto corpus = small_corpus();
  auto cfg = small_config(2);
  cfg.stage2.gamma_imb = 0.0;  // w = 1 for every class
  cfg.stage2.norm_weight = 0.0;
  cfg.stage2.dir_weight = 0.0;
  const auto s1 = stage1_pretrain(cfg, corpus, quiet()).model;
  const auto r = stage2_train_adapter(cfg, corpus, s1, quiet());
  CHECK(same_encoder(r.model.encoder, s1.encoder));
  CHECK(r.initial_ce == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  REQUIRE(r.model.adapter.has_value());
  CHECK(r.model.stage == StageTag::kStage2);
  std::uint64_t total = 0;
  for (auto n : r.train_counts) total += n;
  CHECK(total > 0);

  const auto ck = to_checkpoint(r.model, cfg.hash());
  const auto back = from_checkpoint(cfg, deserialize(serialize(ck), "memory"));
  REQUIRE(back.adapter.has_value());
  CHECK(serialize(to_checkpoint(back, cfg.hash())) == serialize(ck));
}

TEST_CASE("stage 3 with lambda 0, gamma 0, m 0 continues in-batch training exactly") {
  const auto corpus = small_corpus();
  auto cfg = small_config(4);
  const auto s1 = stage1_pretrain(cfg, corpus, quiet()).model;
  auto s2 = stage2_train_adapter(cfg, corpus, s1, quiet()).model;
  cfg.stage3.lambda = 0.0;
  cfg.stage3.gamma_rs = 0.0;
  cfg.stage3.hard_negatives = 0;
  adapter::reset_norm_loss_evaluations();
  const auto r3 = stage3_joint_finetune(cfg, corpus, s2, quiet());
  CHECK(adapter::norm_loss_evaluations() == 0);

  auto enc = s2.encoder;
  InBatchPlan plan;
  plan.batch = cfg.stage3.batch;
  plan.accumulation = cfg.stage3.accumulation;
  plan.epochs = cfg.stage3.epochs;
  plan.optimizer.lr = cfg.stage3.lr;
  plan.optimizer.weight_decay = cfg.stage3.weight_decay;
  plan.optimizer.warmup_steps = cfg.stage3.warmup_steps;
  plan.stream = "stage3";
  const auto log = train_in_batch(enc, corpus, positive_pairs(corpus, data::Split::kTrain), plan, cfg.seed,
                                  cfg.abort_loss, quiet());
  CHECK(log.step_loss == r3.log.step_loss);
  CHECK(same_encoder(enc, r3.model.encoder));
}

TEST_CASE("stage 3 full objective never evaluates the norm loss") {
  const auto corpus = small_corpus();
  auto cfg = small_config(5);
  const auto s1 = stage1_pretrain(cfg, corpus, quiet()).model;
  auto s2 = stage2_train_adapter(cfg, corpus, s1, quiet()).model;
  adapter::reset_norm_loss_evaluations();
  const auto r3 = stage3_joint_finetune(cfg, corpus, s2, quiet());
  CHECK(adapter::norm_loss_evaluations() == 0);
  CHECK(r3.resample_calls > 0);
  CHECK(r3.model.stage == StageTag::kStage3);
  for (double l : r3.log.step_loss) CHECK(std::isfinite(l));
}

TEST_CASE("evaluation: lambda_rr 0 equals base, repeated runs identical, oracle column") {
  const auto corpus = small_corpus();
  auto cfg = small_config(6);
  const auto s1 = stage1_pretrain(cfg, corpus, quiet()).model;
  const auto s2 = stage2_train_adapter(cfg, corpus, s1, quiet()).model;
  cfg.eval.lambda_rr = 0.0;
  const auto base = run_eval(cfg, corpus, s2, EvalMode::kBase);
  const auto rr = run_eval(cfg, corpus, s2, EvalMode::kRerank);
  CHECK(base.report.recall_at == rr.report.recall_at);
  for (const auto& [qid, docs] : base.ranking) {
    const auto& other = rr.ranking.at(qid);
    CHECK(std::vector<std::string>(docs.begin(), docs.begin() + 20) ==
          std::vector<std::string>(other.begin(), other.begin() + 20));
  }
  const auto again = run_eval(cfg, corpus, s2, EvalMode::kBase);
  CHECK(again.report.recall_at == base.report.recall_at);
  CHECK(again.ranking == base.ranking);
  for (std::size_t k : base.report.ks) CHECK(base.report.oracle_recall_at.at(k) >= base.report.recall_at.at(k));
  CHECK_THROWS_AS(run_eval(cfg, corpus, s1, EvalMode::kRerank), DataError);
}

TEST_CASE("sweep over an eval-only parameter reuses one trained model") {
  const auto corpus = small_corpus();
  auto cfg = small_config(7);
  const auto points = run_sweep(cfg, corpus, "lambda_rr", {"0", "1"}, quiet());
  REQUIRE(points.size() == 2);
  CHECK(points[0].base.recall_at == points[1].base.recall_at);
  CHECK(points[0].rerank.recall_at == points[0].base.recall_at);
  CHECK(sweep_key("gamma_rs") == "stage3.gamma_rs");
  CHECK(first_affected_stage("eval.lambda_rr") == 4);
  CHECK(first_affected_stage("stage2.tau") == 2);
  const auto csv = sweep_summary_csv("eval.lambda_rr", points);
  CHECK(csv.find("eval.lambda_rr") != std::string::npos);
  CHECK_THROWS_AS(run_sweep(cfg, corpus, "no_such_knob", {"1"}, quiet()), InvalidArgument);
}

TEST_CASE("ablation variants set the adapter flags") {
  const Config base;
  CHECK_FALSE(with_variant(base, "no_residual").stage2.use_residual);
  CHECK_FALSE(with_variant(base, "no_norm").stage2.use_linear_norm);
  CHECK_FALSE(with_variant(base, "no_init").stage2.use_context_init);
  const auto full = with_variant(base, "full");
  CHECK((full.stage2.use_residual && full.stage2.use_linear_norm && full.stage2.use_context_init));
  CHECK_THROWS_AS(with_variant(base, "no_adapter"), InvalidArgument);
}
