// rrra: command-line driver for the three-stage pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rrra/binary_io.hpp"
#include "rrra/error.hpp"
#include "rrra/pipeline/runner.hpp"
#include "rrra/pipeline/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rrra;
using namespace rrra::pipeline;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
};

Config resolve_config(const Globals& g) {
  Config cfg = g.config_path.empty() ? Config{} : load_config(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string git_describe() {
#ifdef RRRA_SOURCE_DIR
  const std::string cmd = "git -C \"" RRRA_SOURCE_DIR "\" describe --always --dirty 2>/dev/null";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return "";
  std::array<char, 128> buf{};
  std::string out;
  while (std::fgets(buf.data(), buf.size(), pipe.get())) out += buf.data();
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
#else
  return "";
#endif
}

json report_json(const eval::EvalReport& r) {
  json j;
  for (auto k : r.ks) {
    j["recall@" + std::to_string(k)] = r.recall_at.at(k);
    if (r.oracle_recall_at.count(k)) j["oracle_recall@" + std::to_string(k)] = r.oracle_recall_at.at(k);
  }
  j["evaluated"] = r.evaluated;
  j["excluded"] = r.excluded;
  return j;
}

json f1_json(const eval::F1Report& r) {
  json j;
  j["macro_f1"] = r.macro_f1;
  j["error_detection_f1"] = r.error_detection.f1;
  j["error_detection_precision"] = r.error_detection.precision;
  j["error_detection_recall"] = r.error_detection.recall;
  j["n"] = r.n;
  return j;
}

json log_json(const TrainLog& log) {
  json j;
  j["initial_loss"] = log.initial_loss;
  j["epoch_loss"] = log.epoch_loss;
  j["steps"] = log.step_loss.size();
  return j;
}

/// Merges this run's entry into out_dir/manifest.json, keyed by subcommand.
void write_manifest(const fs::path& out_dir, const Config& cfg, const std::string& command, json metrics) {
  const fs::path path = out_dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    m = json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.is_object()) m = json::object();
  }
  json run;
  run["config_toml"] = cfg.to_toml();
  run["config_hash"] = hex64(cfg.hash());
  run["seed"] = cfg.seed;
  run["metrics"] = std::move(metrics);
  m["git_describe"] = git_describe();
  m["runs"][command] = std::move(run);
  fs::create_directories(out_dir);
  io::write_text_atomic(path, m.dump(2) + "\n");
}

Model load_model(const Config& cfg, const fs::path& path) { return from_checkpoint(cfg, load_checkpoint(path)); }

void save_model(const fs::path& path, const Model& model, const Config& cfg) {
  fs::create_directories(path.parent_path());
  save_checkpoint(path, to_checkpoint(model, cfg.hash()));
  std::cout << "wrote " << path.string() << '\n';
}

fs::path default_ckpt(const fs::path& out, const std::string& given, const char* fallback) {
  return given.empty() ? out / fallback : fs::path(given);
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw InvalidArgument("bad seed '" + tok + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("--seeds is empty");
  return out;
}

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RRRA dense retrieval pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "TOML config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override run.seed");
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();
  app.add_option("--set", g.overrides, "override a config key, e.g. --set stage3.lambda=0.25");

  std::string ckpt;
  std::string param;
  std::string values;
  std::string seeds_csv = "1,2,3,4,5";
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus into data.dir");
  gen->add_flag("--force", force, "overwrite an existing corpus");
  app.add_subcommand("stage1", "in-batch contrastive pre-training");
  auto* s2 = app.add_subcommand("stage2", "train the adapter on a frozen encoder");
  s2->add_option("--ckpt", ckpt, "stage-1 checkpoint (default <out-dir>/stage1.ckpt)");
  auto* s3 = app.add_subcommand("stage3", "joint fine-tuning with resampled hard negatives");
  s3->add_option("--ckpt", ckpt, "stage-2 checkpoint (default <out-dir>/stage2.ckpt)");
  auto* ev = app.add_subcommand("eval", "retrieval eval without reranking");
  ev->add_option("--ckpt", ckpt, "checkpoint (default <out-dir>/stage3.ckpt)");
  auto* rr = app.add_subcommand("rerank", "retrieval eval with adapter reranking");
  rr->add_option("--ckpt", ckpt, "checkpoint (default <out-dir>/stage3.ckpt)");
  auto* gp = app.add_subcommand("grad-profile", "negative-gradient magnitude by base-rank bucket");
  gp->add_option("--ckpt", ckpt, "stage-2 checkpoint (default <out-dir>/stage2.ckpt)");
  auto* ab = app.add_subcommand("ablate", "adapter ablations over several seeds");
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds")->capture_default_str();
  auto* sw = app.add_subcommand("sweep", "rerun the pipeline for each value of one parameter");
  sw->add_option("--param", param, "config key or shorthand (gamma_rs, lambda_rr, lambda, m, tau, gamma_imb)")
      ->required();
  sw->add_option("--values", values, "comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const Config cfg = resolve_config(g);
    const fs::path out(g.out_dir);
    fs::create_directories(out);
    const RunContext ctx{out, &std::cerr};
    const std::string command = app.get_subcommands().front()->get_name();

    if (command == "gen-data") {
      const auto dir = resolve(out, cfg.data.dir);
      if (fs::exists(dir / "documents.jsonl") && !force)
        throw DataError("corpus already exists at " + dir.string() + " (use --force to overwrite)");
      SyntheticSpec spec{cfg.data.n_clusters, cfg.data.docs_per_cluster, cfg.data.queries_per_cluster,
                         cfg.data.planted_fn_rate, cfg.data.vocab_style, cfg.seed, cfg.data.train_frac,
                         cfg.data.dev_frac};
      const auto corpus = generate_synthetic(spec);
      data::save_corpus(corpus, dir);
      std::cout << "wrote " << corpus.documents.size() << " documents, " << corpus.queries.size()
                << " queries to " << dir.string() << '\n';
      write_manifest(out, cfg, command,
                     {{"documents", corpus.documents.size()},
                      {"queries", corpus.queries.size()},
                      {"qrels", corpus.qrels.size()},
                      {"hidden_qrels", corpus.hidden_qrels.size()}});
      return 0;
    }

    const auto corpus = load_or_generate_corpus(cfg, out, command == "stage1" || command == "ablate" ||
                                                              command == "sweep");

    if (command == "stage1") {
      auto r = stage1_pretrain(cfg, corpus, ctx);
      save_model(out / "stage1.ckpt", r.model, cfg);
      write_manifest(out, cfg, command, {{"train", log_json(r.log)}});
    } else if (command == "stage2") {
      auto r = stage2_train_adapter(cfg, corpus, load_model(cfg, default_ckpt(out, ckpt, "stage1.ckpt")), ctx);
      save_model(out / "stage2.ckpt", r.model, cfg);
      io::write_text_atomic(out / "stage2_f1.csv", eval::f1_csv(r.dev_f1));
      std::cout << "dev error-detection F1 " << r.dev_f1.error_detection.f1 << " (majority baseline "
                << r.majority_f1.error_detection.f1 << ", oracle-label F1 " << r.oracle_error_f1 << ")\n";
      write_manifest(out, cfg, command,
                     {{"train", log_json(r.log)},
                      {"initial_ce", r.initial_ce},
                      {"train_counts", r.train_counts},
                      {"degenerate_labels", r.degenerate_labels},
                      {"dev", f1_json(r.dev_f1)},
                      {"majority_baseline", f1_json(r.majority_f1)},
                      {"oracle_error_f1", r.oracle_error_f1}});
    } else if (command == "stage3") {
      auto r = stage3_joint_finetune(cfg, corpus, load_model(cfg, default_ckpt(out, ckpt, "stage2.ckpt")), ctx);
      save_model(out / "stage3.ckpt", r.model, cfg);
      write_manifest(out, cfg, command,
                     {{"train", log_json(r.log)},
                      {"resample_calls", r.resample_calls},
                      {"uniform_fallbacks", r.uniform_fallbacks}});
    } else if (command == "eval" || command == "rerank") {
      const auto mode = command == "eval" ? EvalMode::kBase : EvalMode::kRerank;
      const auto r = run_eval(cfg, corpus, load_model(cfg, default_ckpt(out, ckpt, "stage3.ckpt")), mode);
      const auto csv = out / (command == "eval" ? "eval_base.csv" : "eval_rerank.csv");
      eval::write_report_csv(csv, r.report);
      if (mode == EvalMode::kRerank) sampling::write_candidates_tsv(out / "candidates.tsv", r.candidates);
      eval::print_report(std::cout, r.report);
      write_manifest(out, cfg, command, report_json(r.report));
    } else if (command == "grad-profile") {
      const auto profiles =
          run_grad_profile(cfg, corpus, load_model(cfg, default_ckpt(out, ckpt, "stage2.ckpt")), ctx);
      io::write_text_atomic(out / "grad_profile.csv", eval::profile_csv(profiles));
      eval::print_profiles(std::cout, profiles);
      json j;
      for (const auto& p : profiles) j[p.sampler + "_bucket0_mean"] = p.buckets.front().mean;
      j["reference_band_rrra"] = {0.55, 0.65};
      j["reference_band_topk"] = {0.65, 0.85};
      write_manifest(out, cfg, command, j);
    } else if (command == "ablate") {
      const auto seeds = parse_seeds(seeds_csv);
      const auto rows = run_ablation(cfg, corpus, seeds, ctx);
      std::ostringstream os;
      os << "variant,seed,error_f1,macro_f1,majority_error_f1\n";
      for (const auto& r : rows)
        os << r.variant << ',' << r.seed << ',' << r.error_f1 << ',' << r.macro_f1 << ',' << r.majority_error_f1
           << '\n';
      io::write_text_atomic(out / "ablation.csv", os.str());
      const auto means = ablation_means(rows);
      json j;
      for (std::size_t i = 0; i < kAblationVariants.size(); ++i) {
        j[kAblationVariants[i] + "_mean_error_f1"] = means[i];
        std::cout << kAblationVariants[i] << " mean error-detection F1 " << means[i] << '\n';
      }
      write_manifest(out, cfg, command, j);
    } else if (command == "sweep") {
      const auto key = sweep_key(param);
      const auto points = run_sweep(cfg, corpus, param, split_values(values), ctx);
      for (const auto& p : points) {
        const auto dir = out / "sweep" / (key + "=" + p.value);
        fs::create_directories(dir);
        eval::write_report_csv(dir / "eval_base.csv", p.base);
        eval::write_report_csv(dir / "eval_rerank.csv", p.rerank);
      }
      const auto summary = sweep_summary_csv(key, points);
      io::write_text_atomic(out / "sweep" / "summary.csv", summary);
      std::cout << summary;
      json j;
      for (const auto& p : points) j[p.value] = {{"base", report_json(p.base)}, {"rerank", report_json(p.rerank)}};
      write_manifest(out, cfg, command + ":" + key, j);
    }
    return 0;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
