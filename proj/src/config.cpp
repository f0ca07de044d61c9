#include "rrra/pipeline/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rrra/encoder/tokenizer.hpp"
#include "rrra/error.hpp"

namespace rrra::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool bare_key(const std::string& k) {
  if (k.empty()) return false;
  for (char ch : k)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) return false;
  return true;
}

// Drops a trailing comment that is not inside a basic string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (in_str && ch == '\\') {
      ++i;
      continue;
    }
    if (ch == '"') in_str = !in_str;
    if (ch == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& raw, const std::string& where) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"')
    throw DataError(where + ": expected a quoted string, got " + raw);
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    char ch = raw[i];
    if (ch == '\\') {
      if (i + 2 >= raw.size()) throw DataError(where + ": dangling escape");
      const char e = raw[++i];
      switch (e) {
        case 'n': ch = '\n'; break;
        case 't': ch = '\t'; break;
        case '"': ch = '"'; break;
        case '\\': ch = '\\'; break;
        default: throw DataError(where + ": unsupported escape \\" + std::string(1, e));
      }
    } else if (ch == '"') {
      throw DataError(where + ": stray quote inside string");
    }
    out.push_back(ch);
  }
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out.push_back('\\');
    if (ch == '\n') {
      out += "\\n";
      continue;
    }
    if (ch == '\t') {
      out += "\\t";
      continue;
    }
    out.push_back(ch);
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

double parse_double(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v))
    throw InvalidArgument(key + ": expected a number, got '" + raw + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw InvalidArgument(key + ": expected a non-negative integer, got '" + raw + "'");
  return v;
}

bool parse_bool(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s == "true") return true;
  if (s == "false") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + raw + "'");
}

std::vector<double> parse_array(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']')
    throw InvalidArgument(key + ": expected an array like [1, 5, 10], got '" + raw + "'");
  std::vector<double> out;
  std::stringstream ss(s.substr(1, s.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_double(item, key));
  }
  return out;
}

using FieldRef = std::variant<std::uint64_t*, double*, bool*, std::string*, std::vector<double>*>;

std::vector<std::pair<std::string, FieldRef>> fields(Config& c) {
  return {
      {"run.seed", &c.seed},
      {"run.abort_loss", &c.abort_loss},
      {"data.dir", &c.data.dir},
      {"data.n_clusters", &c.data.n_clusters},
      {"data.docs_per_cluster", &c.data.docs_per_cluster},
      {"data.queries_per_cluster", &c.data.queries_per_cluster},
      {"data.planted_fn_rate", &c.data.planted_fn_rate},
      {"data.vocab_style", &c.data.vocab_style},
      {"data.train_frac", &c.data.train_frac},
      {"data.dev_frac", &c.data.dev_frac},
      {"encoder.dim", &c.encoder.dim},
      {"encoder.buckets", &c.encoder.buckets},
      {"encoder.use_projection", &c.encoder.use_projection},
      {"encoder.similarity", &c.encoder.similarity},
      {"stage1.batch", &c.stage1.batch},
      {"stage1.epochs", &c.stage1.epochs},
      {"stage1.lr", &c.stage1.lr},
      {"stage1.weight_decay", &c.stage1.weight_decay},
      {"stage1.warmup_steps", &c.stage1.warmup_steps},
      {"stage2.batch", &c.stage2.batch},
      {"stage2.epochs", &c.stage2.epochs},
      {"stage2.lr", &c.stage2.lr},
      {"stage2.weight_decay", &c.stage2.weight_decay},
      {"stage2.warmup_steps", &c.stage2.warmup_steps},
      {"stage2.hidden", &c.stage2.hidden},
      {"stage2.tau", &c.stage2.tau},
      {"stage2.gamma_imb", &c.stage2.gamma_imb},
      {"stage2.negatives_per_positive", &c.stage2.negatives_per_positive},
      {"stage2.pool", &c.stage2.pool},
      {"stage2.norm_weight", &c.stage2.norm_weight},
      {"stage2.dir_weight", &c.stage2.dir_weight},
      {"stage2.use_residual", &c.stage2.use_residual},
      {"stage2.use_linear_norm", &c.stage2.use_linear_norm},
      {"stage2.use_context_init", &c.stage2.use_context_init},
      {"stage3.batch", &c.stage3.batch},
      {"stage3.accumulation", &c.stage3.accumulation},
      {"stage3.effective_batch", &c.stage3.effective_batch},
      {"stage3.epochs", &c.stage3.epochs},
      {"stage3.lr", &c.stage3.lr},
      {"stage3.adapter_lr", &c.stage3.adapter_lr},
      {"stage3.weight_decay", &c.stage3.weight_decay},
      {"stage3.warmup_steps", &c.stage3.warmup_steps},
      {"stage3.lambda", &c.stage3.lambda},
      {"stage3.hard_negatives", &c.stage3.hard_negatives},
      {"stage3.pool", &c.stage3.pool},
      {"stage3.gamma_rs", &c.stage3.gamma_rs},
      {"stage3.dir_weight", &c.stage3.dir_weight},
      {"stage3.sampler", &c.stage3.sampler},
      {"stage3.resample_mode", &c.stage3.resample_mode},
      {"eval.split", &c.eval.split},
      {"eval.lambda_rr", &c.eval.lambda_rr},
      {"eval.rerank_depth", &c.eval.rerank_depth},
      {"eval.ks", &c.eval.ks},
      {"eval.threads", &c.eval.threads},
      {"profile.queries", &c.profile.queries},
      {"profile.candidates", &c.profile.candidates},
  };
}

}  // namespace

TomlTable parse_toml(const std::string& text, const std::string& source) {
  TomlTable out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw DataError(where + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!bare_key(section)) throw DataError(where + ": unsupported section name '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (!bare_key(key)) throw DataError(where + ": unsupported key '" + key + "'");
    if (value.empty()) throw DataError(where + ": missing value for '" + key + "'");
    if (value.front() == '{') throw DataError(where + ": inline tables are not supported");
    if (value.front() == '"') value = quote(unquote(value, where));
    if (value.front() == '[' && value.back() != ']') throw DataError(where + ": arrays must fit on one line");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, value).second) throw DataError(where + ": duplicate key '" + full + "'");
  }
  return out;
}

void Config::set(const std::string& key, const std::string& raw) {
  for (auto& [name, ref] : fields(*this)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::uint64_t>) {
            *p = parse_uint(raw, key);
          } else if constexpr (std::is_same_v<T, double>) {
            *p = parse_double(raw, key);
          } else if constexpr (std::is_same_v<T, bool>) {
            *p = parse_bool(raw, key);
          } else if constexpr (std::is_same_v<T, std::string>) {
            const std::string t = trim(raw);
            *p = (!t.empty() && t.front() == '"') ? unquote(t, key) : t;
          } else {
            *p = parse_array(raw, key);
          }
        },
        ref);
    return;
  }
  throw InvalidArgument("unknown config key '" + key + "'");
}

void Config::apply(const TomlTable& table) {
  for (const auto& [k, v] : table) set(k, v);
}

void Config::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw InvalidArgument(std::string(name) + " must be positive");
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0)) throw InvalidArgument(std::string(name) + " must be non-negative");
  };
  positive(static_cast<double>(encoder.dim), "encoder.dim");
  positive(static_cast<double>(encoder.buckets), "encoder.buckets");
  if (encoder.similarity != "dot" && encoder.similarity != "cosine")
    throw InvalidArgument("encoder.similarity must be dot or cosine");
  if (data.planted_fn_rate < 0.0 || data.planted_fn_rate > 0.9)
    throw InvalidArgument("data.planted_fn_rate must lie in [0, 0.9]");
  if (data.train_frac <= 0.0 || data.dev_frac < 0.0 || data.train_frac + data.dev_frac > 1.0)
    throw InvalidArgument("data.train_frac and data.dev_frac must be fractions summing to at most 1");
  positive(static_cast<double>(stage1.batch), "stage1.batch");
  positive(stage1.lr, "stage1.lr");
  non_negative(stage1.weight_decay, "stage1.weight_decay");
  positive(static_cast<double>(stage2.batch), "stage2.batch");
  positive(stage2.lr, "stage2.lr");
  positive(static_cast<double>(stage2.hidden), "stage2.hidden");
  if (!(stage2.tau > 0.0 && stage2.tau < 1.0)) throw InvalidArgument("stage2.tau must lie in (0, 1)");
  non_negative(stage2.gamma_imb, "stage2.gamma_imb");
  positive(static_cast<double>(stage2.negatives_per_positive), "stage2.negatives_per_positive");
  positive(static_cast<double>(stage2.pool), "stage2.pool");
  if (stage2.pool < stage2.negatives_per_positive)
    throw InvalidArgument("stage2.pool must be at least stage2.negatives_per_positive");
  non_negative(stage2.norm_weight, "stage2.norm_weight");
  non_negative(stage2.dir_weight, "stage2.dir_weight");
  positive(static_cast<double>(stage3.batch), "stage3.batch");
  positive(static_cast<double>(stage3.accumulation), "stage3.accumulation");
  if (stage3.batch * stage3.accumulation != stage3.effective_batch) {
    throw InvalidArgument("stage3.batch x stage3.accumulation = " +
                          std::to_string(stage3.batch * stage3.accumulation) +
                          " but stage3.effective_batch = " + std::to_string(stage3.effective_batch));
  }
  positive(stage3.lr, "stage3.lr");
  positive(stage3.adapter_lr, "stage3.adapter_lr");
  non_negative(stage3.lambda, "stage3.lambda");
  non_negative(stage3.gamma_rs, "stage3.gamma_rs");
  non_negative(stage3.dir_weight, "stage3.dir_weight");
  if (stage3.hard_negatives > stage3.pool) throw InvalidArgument("stage3.hard_negatives exceeds stage3.pool");
  if (stage3.sampler != "random" && stage3.sampler != "topk" && stage3.sampler != "rrra")
    throw InvalidArgument("stage3.sampler must be random, topk or rrra");
  if (stage3.resample_mode != "proportional" && stage3.resample_mode != "top_by_score")
    throw InvalidArgument("stage3.resample_mode must be proportional or top_by_score");
  if (eval.split != "train" && eval.split != "dev" && eval.split != "test")
    throw InvalidArgument("eval.split must be train, dev or test");
  non_negative(eval.lambda_rr, "eval.lambda_rr");
  positive(static_cast<double>(eval.rerank_depth), "eval.rerank_depth");
  if (eval.ks.empty()) throw InvalidArgument("eval.ks is empty");
  for (double k : eval.ks)
    if (!(k >= 1.0) || k != std::floor(k)) throw InvalidArgument("eval.ks must hold positive integers");
  positive(abort_loss, "run.abort_loss");
}

std::string Config::to_toml() const {
  std::ostringstream os;
  std::string section;
  for (auto& [name, ref] : fields(const_cast<Config&>(*this))) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << name.substr(dot + 1) << " = ";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::uint64_t>) {
            os << *p;
          } else if constexpr (std::is_same_v<T, double>) {
            os << format_double(*p);
          } else if constexpr (std::is_same_v<T, bool>) {
            os << (*p ? "true" : "false");
          } else if constexpr (std::is_same_v<T, std::string>) {
            os << quote(*p);
          } else {
            os << '[';
            for (std::size_t i = 0; i < p->size(); ++i) {
              const double v = (*p)[i];
              os << (i ? ", " : "");
              if (v == std::floor(v) && std::abs(v) < 1e15)
                os << static_cast<long long>(v);
              else
                os << format_double(v);
            }
            os << ']';
          }
        },
        ref);
    os << '\n';
  }
  return os.str();
}

std::uint64_t Config::hash() const { return encoder::fnv1a64(to_toml()); }

std::vector<std::size_t> Config::ks() const {
  std::vector<std::size_t> out;
  for (double k : eval.ks) out.push_back(static_cast<std::size_t>(k));
  return out;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Config c;
  try {
    c.apply(parse_toml(ss.str(), path.string()));
  } catch (const InvalidArgument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace rrra::pipeline
