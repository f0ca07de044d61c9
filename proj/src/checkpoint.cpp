#include "rrra/pipeline/checkpoint.hpp"

#include "rrra/binary_io.hpp"
#include "rrra/encoder/tokenizer.hpp"

namespace rrra::pipeline {

namespace {
constexpr std::string_view kMagic = "RRRACKPT";
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

std::string to_string(StageTag tag) {
  switch (tag) {
    case StageTag::kInit: return "init";
    case StageTag::kStage1: return "stage1";
    case StageTag::kStage2: return "stage2";
    case StageTag::kStage3: return "stage3";
  }
  return "?";
}

const num::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r.tensor;
  return nullptr;
}

const num::Tensor& Checkpoint::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw DataError("checkpoint has no record '" + name + "'");
}

void Checkpoint::put(std::string name, num::Tensor t) {
  for (auto& r : records) {
    if (r.name == name) {
      r.tensor = std::move(t);
      return;
    }
  }
  records.push_back({std::move(name), std::move(t)});
}

std::vector<char> serialize(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.u64(ckpt.config_hash);
  w.u32(static_cast<std::uint32_t>(ckpt.stage));
  w.u32(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.tensor.dims.size()));
    for (auto d : r.tensor.dims) w.u32(d);
    for (float v : r.tensor.data) w.f32(v);
  }
  const auto& body = w.buffer();
  w.u64(encoder::fnv1a64(std::string_view(body.data(), body.size())));
  return w.buffer();
}

Checkpoint deserialize(const std::vector<char>& bytes, const std::string& what) {
  if (bytes.size() < kMagic.size() + 8) throw DataError(what + ": file too short to be a checkpoint");
  if (std::string_view(bytes.data(), kMagic.size()) != kMagic)
    throw DataError(what + ": bad magic, not an RRRA checkpoint");
  const std::size_t body = bytes.size() - 8;
  io::ByteReader tail(bytes.data() + body, 8, what);
  if (tail.u64() != encoder::fnv1a64(std::string_view(bytes.data(), body)))
    throw DataError(what + ": checksum mismatch (file is corrupted)");

  io::ByteReader r(bytes.data(), body, what);
  r.bytes(kMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(what + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = r.u64();
  const std::uint32_t stage = r.u32();
  if (stage > static_cast<std::uint32_t>(StageTag::kStage3))
    throw DataError(what + ": unknown stage tag " + std::to_string(stage));
  c.stage = static_cast<StageTag>(stage);
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord rec;
    rec.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > kMaxRank)
      throw DataError(what + ": record '" + rec.name + "' has invalid rank " + std::to_string(rank));
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    for (auto d : dims)
      if (d == 0) throw DataError(what + ": record '" + rec.name + "' has a zero dimension");
    const std::size_t count = num::product(dims);
    if (count > r.remaining() / 4) throw DataError(what + ": record '" + rec.name + "' is truncated");
    std::vector<float> data(count);
    for (auto& v : data) v = r.f32();
    rec.tensor = num::Tensor(std::move(dims), std::move(data));
    if (c.find(rec.name)) throw DataError(what + ": duplicate record '" + rec.name + "'");
    c.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw DataError(what + ": trailing bytes after the last record");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, serialize(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return deserialize(io::read_file(path), path.string());
}

void store_parameters(Checkpoint& ckpt, std::span<const num::Parameter<float>* const> params) {
  for (const auto* p : params) ckpt.put(p->name, num::to_tensor(p->value));
}

void restore_parameters(const Checkpoint& ckpt, std::span<num::Parameter<float>* const> params) {
  std::vector<const num::Tensor*> sources;
  for (auto* p : params) {
    const num::Tensor* t = ckpt.find(p->name);
    if (!t) throw DataError("checkpoint has no record '" + p->name + "'");
    if (!num::shape_matches(p->value, *t)) {
      throw DataError("checkpoint record '" + p->name + "' is " + t->shape_string() + ", model expects " +
                      num::shape_string(p->value.rows(), p->value.cols()));
    }
    if (!t->all_finite()) throw DataError("checkpoint record '" + p->name + "' holds non-finite values");
    sources.push_back(t);
  }
  for (std::size_t i = 0; i < params.size(); ++i) num::assign_from(params[i]->value, *sources[i]);
}

}  // namespace rrra::pipeline
