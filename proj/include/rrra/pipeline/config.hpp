#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace rrra::pipeline {

/// Flat "section.key" -> raw value text, as read from a TOML file. Only the
/// subset the reference config uses is accepted: [section] headers, bare
/// keys, integers, floats, booleans, basic strings, and flat arrays of
/// numbers. Anything else is a DataError with the line number.
using TomlTable = std::map<std::string, std::string>;
TomlTable parse_toml(const std::string& text, const std::string& source = "<config>");

struct DataConfig {
  std::string dir = "data";
  std::uint64_t n_clusters = 50;
  std::uint64_t docs_per_cluster = 20;
  std::uint64_t queries_per_cluster = 4;
  double planted_fn_rate = 0.2;
  std::string vocab_style = "syllable";
  double train_frac = 0.7;
  double dev_frac = 0.15;
};

struct EncoderConfig {
  std::uint64_t dim = 32;
  std::uint64_t buckets = 4096;
  bool use_projection = true;
  std::string similarity = "dot";
};

struct Stage1Config {
  std::uint64_t batch = 128;
  std::uint64_t epochs = 10;
  double lr = 0.001;
  double weight_decay = 0.0;
  std::uint64_t warmup_steps = 2;
};

struct Stage2Config {
  std::uint64_t batch = 128;
  std::uint64_t epochs = 5;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::uint64_t warmup_steps = 0;
  std::uint64_t hidden = 64;
  double tau = 0.5;
  double gamma_imb = 0.3;
  std::uint64_t negatives_per_positive = 15;
  std::uint64_t pool = 64;
  double norm_weight = 1.0;
  double dir_weight = 1.0;
  bool use_residual = true;
  bool use_linear_norm = true;
  bool use_context_init = true;
};

struct Stage3Config {
  std::uint64_t batch = 64;
  std::uint64_t accumulation = 2;
  std::uint64_t effective_batch = 128;
  std::uint64_t epochs = 5;
  double lr = 0.003;
  double adapter_lr = 0.005;
  double weight_decay = 0.0;
  std::uint64_t warmup_steps = 0;
  double lambda = 0.5;
  std::uint64_t hard_negatives = 4;
  std::uint64_t pool = 64;
  double gamma_rs = 1.0;
  double dir_weight = 1.0;
  std::string sampler = "rrra";
  std::string resample_mode = "proportional";
};

struct EvalConfig {
  std::string split = "dev";
  double lambda_rr = 1.0;
  std::uint64_t rerank_depth = 100;
  std::vector<double> ks = {1, 5, 10, 20, 50, 100};
  std::uint64_t threads = 1;
};

struct ProfileConfig {
  std::uint64_t queries = 100;
  std::uint64_t candidates = 1000;
};

struct Config {
  std::uint64_t seed = 42;
  double abort_loss = 1e4;
  DataConfig data;
  EncoderConfig encoder;
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  EvalConfig eval;
  ProfileConfig profile;

  /// Applies one "section.key" = raw value. Unknown keys and malformed values
  /// are InvalidArgument errors.
  void set(const std::string& key, const std::string& raw);
  void apply(const TomlTable& table);

  /// Throws InvalidArgument when an invariant fails (non-positive rates,
  /// batch × accumulation != effective batch, and so on).
  void validate() const;

  /// Canonical TOML rendering; every field, fixed order.
  std::string to_toml() const;
  /// FNV-1a of to_toml().
  std::uint64_t hash() const;

  std::vector<std::size_t> ks() const;
};

Config load_config(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace rrra::pipeline
