#pragma once

// Checkpoint layout (little-endian):
//
//   "RRRACKPT"  u32 version  u64 config_hash  u32 stage  u32 record_count
//   record_count × { u32 name_len, name bytes, u32 rank, rank × u32 dim, f32 data... }
//   u64 FNV-1a of every preceding byte
//
// Loading parses and verifies the whole file before anything is returned, so
// a rejected file never leaves a model half-updated.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rrra/numkernel/tape.hpp"
#include "rrra/numkernel/tensor.hpp"

namespace rrra::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class StageTag : std::uint32_t { kInit = 0, kStage1 = 1, kStage2 = 2, kStage3 = 3 };
std::string to_string(StageTag tag);

struct TensorRecord {
  std::string name;
  num::Tensor tensor;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  StageTag stage = StageTag::kInit;
  std::vector<TensorRecord> records;

  const num::Tensor* find(const std::string& name) const;
  const num::Tensor& at(const std::string& name) const;  // DataError when absent
  void put(std::string name, num::Tensor t);
};

std::vector<char> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<char>& bytes, const std::string& what);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// DataError naming the path if it is missing, truncated, or corrupted.
Checkpoint load_checkpoint(const std::filesystem::path& path);

void store_parameters(Checkpoint& ckpt, std::span<const num::Parameter<float>* const> params);

/// Copies every named record into the matching parameter. All names and
/// shapes are checked first; on any mismatch nothing is written.
void restore_parameters(const Checkpoint& ckpt, std::span<num::Parameter<float>* const> params);

}  // namespace rrra::pipeline
