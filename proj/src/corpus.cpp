#include "rrra/data/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rrra/binary_io.hpp"
#include "rrra/random.hpp"

namespace rrra::data {

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

void Corpus::validate() const {
  std::set<std::string> doc_ids, query_ids;
  for (const auto& d : documents)
    if (!doc_ids.insert(d.id).second) throw DataError("duplicate document id '" + d.id + "'");
  for (const auto& q : queries)
    if (!query_ids.insert(q.id).second) throw DataError("duplicate query id '" + q.id + "'");
  std::set<std::pair<std::string, std::string>> labeled;
  auto check = [&](const std::vector<Judgement>& js, const char* what) {
    for (const auto& j : js) {
      if (!query_ids.count(j.query_id))
        throw DataError(std::string(what) + ": unknown query id '" + j.query_id + "'");
      if (!doc_ids.count(j.doc_id))
        throw DataError(std::string(what) + ": unknown document id '" + j.doc_id + "'");
    }
  };
  check(qrels, "qrels");
  check(hidden_qrels, "hidden_qrels");
  for (const auto& j : qrels) labeled.emplace(j.query_id, j.doc_id);
  for (const auto& j : hidden_qrels) {
    if (labeled.count({j.query_id, j.doc_id})) {
      throw DataError("hidden_qrels overlaps qrels at (" + j.query_id + ", " + j.doc_id + ")");
    }
  }
  for (const auto& [qid, _] : splits)
    if (!query_ids.count(qid)) throw DataError("splits: unknown query id '" + qid + "'");
}

namespace {
Qrels collect(const std::vector<Judgement>& js) {
  Qrels out;
  for (const auto& j : js)
    if (j.relevance > 0) out[j.query_id].insert(j.doc_id);
  return out;
}
}  // namespace

Qrels Corpus::relevant() const { return collect(qrels); }
Qrels Corpus::hidden_relevant() const { return collect(hidden_qrels); }

Qrels Corpus::oracle_relevant() const {
  Qrels out = relevant();
  for (const auto& [q, docs] : hidden_relevant()) out[q].insert(docs.begin(), docs.end());
  return out;
}

std::vector<const Query*> Corpus::queries_in(Split s) const {
  std::vector<const Query*> out;
  for (const auto& q : queries) {
    auto it = splits.find(q.id);
    if (it != splits.end() && it->second == s) out.push_back(&q);
  }
  return out;
}

std::unordered_map<std::string, std::size_t> Corpus::document_rows() const {
  std::unordered_map<std::string, std::size_t> rows;
  for (std::size_t i = 0; i < documents.size(); ++i) rows.emplace(documents[i].id, i);
  return rows;
}

namespace {

template <typename Record>
std::string to_jsonl(const std::vector<Record>& records) {
  std::ostringstream os;
  for (const auto& r : records) os << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
  return os.str();
}

template <typename Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Record r;
      r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      r.text = j.at("text").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string to_tsv(const std::vector<Judgement>& js) {
  std::ostringstream os;
  for (const auto& j : js) os << j.query_id << '\t' << j.doc_id << '\t' << j.relevance << '\n';
  return os.str();
}

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path, std::size_t cols) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != cols) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(cols) + " tab-separated columns");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::vector<Judgement> read_judgements(const std::filesystem::path& path) {
  std::vector<Judgement> out;
  for (auto& row : read_tsv(path, 3)) {
    Judgement j;
    j.query_id = row[0];
    j.doc_id = row[1];
    try {
      j.relevance = std::stoi(row[2]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": bad relevance '" + row[2] + "'");
    }
    if (j.relevance != 0 && j.relevance != 1)
      throw DataError(path.string() + ": relevance must be 0 or 1");
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_text_atomic(dir / "documents.jsonl", to_jsonl(corpus.documents));
  io::write_text_atomic(dir / "queries.jsonl", to_jsonl(corpus.queries));
  io::write_text_atomic(dir / "qrels.tsv", to_tsv(corpus.qrels));
  io::write_text_atomic(dir / "hidden_qrels.tsv", to_tsv(corpus.hidden_qrels));
  std::ostringstream os;
  for (const auto& q : corpus.queries) {
    auto it = corpus.splits.find(q.id);
    if (it != corpus.splits.end()) os << q.id << '\t' << to_string(it->second) << '\n';
  }
  io::write_text_atomic(dir / "splits.tsv", os.str());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  Corpus c;
  c.documents = read_jsonl<Document>(dir / "documents.jsonl");
  c.queries = read_jsonl<Query>(dir / "queries.jsonl");
  c.qrels = read_judgements(dir / "qrels.tsv");
  if (std::filesystem::exists(dir / "hidden_qrels.tsv")) c.hidden_qrels = read_judgements(dir / "hidden_qrels.tsv");
  if (std::filesystem::exists(dir / "splits.tsv")) {
    for (auto& row : read_tsv(dir / "splits.tsv", 2)) c.splits[row[0]] = parse_split(row[1]);
  } else {
    c.splits = assign_splits(c.queries, 0.7, 0.15, 0);
  }
  c.validate();
  return c;
}

std::map<std::string, Split> assign_splits(const std::vector<Query>& queries, double train_frac,
                                           double dev_frac, std::uint64_t seed) {
  std::vector<std::size_t> order(queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "splits"));
  rng.shuffle(order);
  const auto n = static_cast<double>(queries.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
  const auto n_dev = static_cast<std::size_t>(std::llround(dev_frac * n));
  std::map<std::string, Split> out;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Split s = r < n_train ? Split::kTrain : (r < n_train + n_dev ? Split::kDev : Split::kTest);
    out[queries[order[r]].id] = s;
  }
  return out;
}

}  // namespace rrra::data
