#pragma once

// Multi-run experiments built from the stage functions: seed sweeps over
// adapter ablations, the end-to-end retrieval trend, the gradient profile,
// and one-parameter sweeps.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rrra/pipeline/stages.hpp"

namespace rrra::pipeline {

inline const std::vector<std::string> kAblationVariants = {"full", "no_residual", "no_norm", "no_init"};

/// cfg with the adapter flags of `variant` ("full", "no_residual", "no_norm", "no_init").
Config with_variant(Config cfg, const std::string& variant);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double error_f1 = 0.0;
  double macro_f1 = 0.0;
  double majority_error_f1 = 0.0;
};

/// Stage 1 once per seed, then stage 2 for every variant on top of it.
std::vector<AblationRow> run_ablation(const Config& cfg, const data::Corpus& corpus,
                                      std::span<const std::uint64_t> seeds, const RunContext& ctx);

/// Mean error-detection F1 per variant, in kAblationVariants order.
std::vector<double> ablation_means(const std::vector<AblationRow>& rows);

struct TrendRow {
  std::uint64_t seed = 0;
  double stage1_r1 = 0.0;  // stage-1 bi-encoder, base search
  double base_r1 = 0.0;    // after stage 3, no reranking
  double full_r1 = 0.0;    // after stage 3, reranked
};

/// Full pipeline per seed, recording dev r@1 at each point of comparison.
std::vector<TrendRow> run_trend(const Config& cfg, const data::Corpus& corpus,
                                std::span<const std::uint64_t> seeds, const RunContext& ctx);

/// Stage 3 from `stage2` once with the top-k sampler and once with RRRA
/// resampling; each resulting encoder is profiled on candidates ranked by the
/// stage-2 encoder.
std::vector<eval::GradientProfile> run_grad_profile(const Config& cfg, const data::Corpus& corpus,
                                                    const Model& stage2, const RunContext& ctx);

/// Expands shorthand parameter names ("gamma_rs") to config keys ("stage3.gamma_rs").
std::string sweep_key(const std::string& param);

/// 1 for data/encoder/stage1/run keys, 2 for stage2, 3 for stage3, 4 for eval-only keys.
int first_affected_stage(const std::string& key);

struct SweepPoint {
  std::string value;
  eval::EvalReport base;
  eval::EvalReport rerank;
  double dev_error_f1 = 0.0;
};

/// Reruns the pipeline from the earliest stage the parameter touches, once per value.
std::vector<SweepPoint> run_sweep(const Config& cfg, const data::Corpus& corpus, const std::string& param,
                                  const std::vector<std::string>& values, const RunContext& ctx);

std::string sweep_summary_csv(const std::string& key, const std::vector<SweepPoint>& points);

}  // namespace rrra::pipeline
