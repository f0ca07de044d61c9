#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rrra/adapter/adapter.hpp"
#include "rrra/data/corpus.hpp"
#include "rrra/encoder/dual_encoder.hpp"
#include "rrra/eval/metrics.hpp"
#include "rrra/index/brute_force_index.hpp"
#include "rrra/numkernel/adamw.hpp"
#include "rrra/pipeline/checkpoint.hpp"
#include "rrra/pipeline/config.hpp"
#include "rrra/sampling/scoring.hpp"
#include "rrra/supervision/losses.hpp"

namespace rrra::pipeline {

/// Encoder plus, from stage 2 on, the adapter and the class weights it was
/// trained with.
struct Model {
  encoder::DualEncoder<float> encoder;
  std::optional<adapter::Adapter<float>> adapter;
  supervision::ClassWeights class_weights;
  StageTag stage = StageTag::kInit;
};

Model make_model(const Config& cfg);
Checkpoint to_checkpoint(const Model& model, std::uint64_t config_hash);
/// Shapes come from cfg; the adapter is restored when the checkpoint has one.
Model from_checkpoint(const Config& cfg, const Checkpoint& ckpt);

/// Where a run writes diagnostics (abort dumps) and progress lines.
struct RunContext {
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

struct TrainLog {
  /// Mean loss of every optimizer step, in order.
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;  // loss of the first step, before any update
};

/// (query_id, doc_id) training pairs from the labeled positives of `split`.
std::vector<std::pair<std::string, std::string>> positive_pairs(const data::Corpus& corpus,
                                                                data::Split split);

struct InBatchPlan {
  std::uint64_t batch = 128;
  std::uint64_t accumulation = 1;
  std::uint64_t epochs = 1;
  num::AdamWConfig optimizer;
  std::string stream = "stage1";  // seed stream for the per-epoch shuffle
};

/// In-batch contrastive training: each query's positive against the other
/// positives of its micro-batch, sigmoid BCE on dot scores. Gradients of
/// `accumulation` micro-batches are summed (each scaled by 1/accumulation)
/// before one AdamW step.
TrainLog train_in_batch(encoder::DualEncoder<float>& enc, const data::Corpus& corpus,
                        const std::vector<std::pair<std::string, std::string>>& pairs,
                        const InBatchPlan& plan, std::uint64_t seed, double abort_loss,
                        const RunContext& ctx);

struct Stage1Result {
  Model model;
  TrainLog log;
};
Stage1Result stage1_pretrain(const Config& cfg, const data::Corpus& corpus, const RunContext& ctx);

/// One labeled (query, context) pair for the adapter.
struct AdapterPair {
  std::string query_id;
  std::string doc_id;
  int gold = 0;
  double score = 0.0;  // dot score under the frozen encoder
  supervision::OutcomeLabel label = supervision::OutcomeLabel::kTN;
  num::VectorF q;
  num::VectorF c;
};

/// Per query of `split`: every labeled positive plus negatives_per_positive
/// negatives per positive, drawn uniformly from the top-`pool` mined non-gold
/// candidates. Labels come from derive_outcome on the encoder's dot score.
std::vector<AdapterPair> build_adapter_pairs(const Config& cfg, const data::Corpus& corpus,
                                             const encoder::DualEncoder<float>& enc,
                                             const index::BruteForceIndex& index, data::Split split,
                                             std::uint64_t seed);

struct Stage2Result {
  Model model;
  TrainLog log;
  std::array<std::uint64_t, 4> train_counts{};
  eval::F1Report dev_f1;
  eval::F1Report majority_f1;
  supervision::OutcomeLabel majority = supervision::OutcomeLabel::kTN;
  /// Error-detection F1 against labels re-derived with hidden positives counted as gold.
  double oracle_error_f1 = 0.0;
  double initial_ce = 0.0;
  bool degenerate_labels = false;
};

/// Trains the adapter against a frozen encoder. Objective per pair:
/// w[y]·CE + norm_weight·L_norm (when enabled) + dir_weight·w[y]·L_dir.
Stage2Result stage2_train_adapter(const Config& cfg, const data::Corpus& corpus, Model model,
                                  const RunContext& ctx);

/// Adapter predictions for pairs, argmax over logits.
std::vector<supervision::OutcomeLabel> predict_labels(const adapter::Adapter<float>& ad,
                                                      const std::vector<AdapterPair>& pairs);

struct Stage3Result {
  Model model;
  TrainLog log;
  std::uint64_t uniform_fallbacks = 0;
  std::uint64_t resample_calls = 0;
};

/// Joint fine-tuning: in-batch negatives plus m sampled hard negatives per
/// query, loss = contrastive + lambda·adapter objective (no L_norm).
Stage3Result stage3_joint_finetune(const Config& cfg, const data::Corpus& corpus, Model model,
                                   const RunContext& ctx);

enum class EvalMode { kBase, kRerank };
std::string to_string(EvalMode mode);

struct EvalOutput {
  eval::EvalReport report;
  eval::Ranking ranking;
  std::vector<sampling::ScoredCandidate> candidates;  // reranked head lists (rerank mode)
};

EvalOutput run_eval(const Config& cfg, const data::Corpus& corpus, const Model& model, EvalMode mode);

/// Gradient-profile inputs: for up to profile.queries queries of the split, the
/// top profile.candidates non-gold documents under `reference`, with their ranks.
std::vector<eval::ProfileQuery> profile_inputs(const Config& cfg, const data::Corpus& corpus,
                                               const encoder::DualEncoder<float>& reference);

/// Resolves a config path against out_dir when it is relative.
std::filesystem::path resolve(const std::filesystem::path& out_dir, const std::string& p);

data::Corpus load_or_generate_corpus(const Config& cfg, const std::filesystem::path& out_dir,
                                     bool generate_if_missing);

}  // namespace rrra::pipeline
