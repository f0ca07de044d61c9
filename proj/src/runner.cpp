#include "rrra/pipeline/runner.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "rrra/error.hpp"

namespace rrra::pipeline {

Config with_variant(Config cfg, const std::string& variant) {
  cfg.stage2.use_residual = true;
  cfg.stage2.use_linear_norm = true;
  cfg.stage2.use_context_init = true;
  if (variant == "no_residual") {
    cfg.stage2.use_residual = false;
  } else if (variant == "no_norm") {
    cfg.stage2.use_linear_norm = false;
  } else if (variant == "no_init") {
    cfg.stage2.use_context_init = false;
  } else if (variant != "full") {
    throw InvalidArgument("unknown ablation variant '" + variant + "'");
  }
  return cfg;
}

std::vector<AblationRow> run_ablation(const Config& cfg, const data::Corpus& corpus,
                                      std::span<const std::uint64_t> seeds, const RunContext& ctx) {
  std::vector<AblationRow> rows;
  for (auto seed : seeds) {
    Config base = cfg;
    base.seed = seed;
    const auto s1 = stage1_pretrain(base, corpus, ctx);
    for (const auto& variant : kAblationVariants) {
      const auto r = stage2_train_adapter(with_variant(base, variant), corpus, s1.model, ctx);
      rows.push_back({variant, seed, r.dev_f1.error_detection.f1, r.dev_f1.macro_f1,
                      r.majority_f1.error_detection.f1});
      if (ctx.log)
        *ctx.log << "ablate seed " << seed << ' ' << variant << " error_f1 " << rows.back().error_f1 << '\n';
    }
  }
  return rows;
}

std::vector<double> ablation_means(const std::vector<AblationRow>& rows) {
  std::vector<double> out;
  for (const auto& v : kAblationVariants) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      sum += r.error_f1;
      ++n;
    }
    out.push_back(n ? sum / static_cast<double>(n) : 0.0);
  }
  return out;
}

std::vector<TrendRow> run_trend(const Config& cfg, const data::Corpus& corpus,
                                std::span<const std::uint64_t> seeds, const RunContext& ctx) {
  std::vector<TrendRow> rows;
  for (auto seed : seeds) {
    Config c = cfg;
    c.seed = seed;
    auto s1 = stage1_pretrain(c, corpus, ctx);
    TrendRow row;
    row.seed = seed;
    row.stage1_r1 = run_eval(c, corpus, s1.model, EvalMode::kBase).report.recall_at.at(1);
    auto s2 = stage2_train_adapter(c, corpus, std::move(s1.model), ctx);
    auto s3 = stage3_joint_finetune(c, corpus, std::move(s2.model), ctx);
    row.base_r1 = run_eval(c, corpus, s3.model, EvalMode::kBase).report.recall_at.at(1);
    row.full_r1 = run_eval(c, corpus, s3.model, EvalMode::kRerank).report.recall_at.at(1);
    if (ctx.log)
      *ctx.log << "trend seed " << seed << " stage1 " << row.stage1_r1 << " base " << row.base_r1 << " full "
               << row.full_r1 << '\n';
    rows.push_back(row);
  }
  return rows;
}

std::vector<eval::GradientProfile> run_grad_profile(const Config& cfg, const data::Corpus& corpus,
                                                    const Model& stage2, const RunContext& ctx) {
  const auto inputs = profile_inputs(cfg, corpus, stage2.encoder);
  std::vector<eval::GradientProfile> out;
  for (const std::string sampler : {"topk", "rrra"}) {
    Config c = cfg;
    c.stage3.sampler = sampler;
    const auto r = stage3_joint_finetune(c, corpus, stage2, ctx);
    out.push_back(eval::gradient_profile(r.model.encoder, inputs, sampler));
  }
  return out;
}

std::string sweep_key(const std::string& param) {
  static const std::map<std::string, std::string> aliases = {
      {"gamma_rs", "stage3.gamma_rs"},   {"lambda_rr", "eval.lambda_rr"},   {"lambda", "stage3.lambda"},
      {"m", "stage3.hard_negatives"},    {"tau", "stage2.tau"},             {"gamma_imb", "stage2.gamma_imb"},
      {"seed", "run.seed"},              {"planted_fn_rate", "data.planted_fn_rate"},
  };
  auto it = aliases.find(param);
  return it != aliases.end() ? it->second : param;
}

int first_affected_stage(const std::string& key) {
  const auto section = key.substr(0, key.find('.'));
  if (section == "stage2") return 2;
  if (section == "stage3") return 3;
  if (section == "eval" || section == "profile") return 4;
  return 1;
}

std::vector<SweepPoint> run_sweep(const Config& cfg, const data::Corpus& corpus, const std::string& param,
                                  const std::vector<std::string>& values, const RunContext& ctx) {
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");
  const std::string key = sweep_key(param);
  if (key.rfind("data.", 0) == 0)
    throw InvalidArgument("sweep over data.* keys is not supported; generate one corpus per value instead");
  const int first = first_affected_stage(key);
  {
    Config probe = cfg;
    probe.set(key, values.front());  // rejects unknown keys before any training
  }

  // Shared prefix: the stages that no value changes run once with the base config.
  std::optional<Model> after1;
  std::optional<Model> after2;
  std::optional<Model> after3;
  double shared_f1 = 0.0;
  if (first > 1) after1 = stage1_pretrain(cfg, corpus, ctx).model;
  if (first > 2) {
    auto r2 = stage2_train_adapter(cfg, corpus, *after1, ctx);
    shared_f1 = r2.dev_f1.error_detection.f1;
    after2 = std::move(r2.model);
  }
  if (first > 3) after3 = stage3_joint_finetune(cfg, corpus, *after2, ctx).model;

  std::vector<SweepPoint> out;
  for (const auto& value : values) {
    Config c = cfg;
    c.set(key, value);
    c.validate();
    SweepPoint p;
    p.value = value;
    p.dev_error_f1 = shared_f1;
    Model m = first <= 1 ? stage1_pretrain(c, corpus, ctx).model : *after1;
    if (first <= 2) {
      auto r2 = stage2_train_adapter(c, corpus, std::move(m), ctx);
      p.dev_error_f1 = r2.dev_f1.error_detection.f1;
      m = std::move(r2.model);
    } else if (first == 3) {
      m = *after2;
    }
    if (first <= 3)
      m = stage3_joint_finetune(c, corpus, std::move(m), ctx).model;
    else
      m = *after3;
    p.base = run_eval(c, corpus, m, EvalMode::kBase).report;
    p.rerank = run_eval(c, corpus, m, EvalMode::kRerank).report;
    out.push_back(std::move(p));
  }
  return out;
}

std::string sweep_summary_csv(const std::string& key, const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << "param,value,mode,dev_error_f1";
  if (!points.empty())
    for (auto k : points.front().base.ks) os << ",recall@" << k;
  os << '\n';
  char buf[32];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& p : points) {
    for (const auto* rep : {&p.base, &p.rerank}) {
      os << key << ',' << p.value << ',' << (rep == &p.base ? "base" : "rerank") << ',' << fmt(p.dev_error_f1);
      for (auto k : rep->ks) os << ',' << fmt(rep->recall_at.at(k));
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace rrra::pipeline
