#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rrra/numkernel/tensor.hpp"

namespace rrra::encoder {

// Binary layout: "RRRAEMB1", u32 count, u32 dim, count*dim f32 little-endian,
// row-major. Row i belongs to the i-th line of the sidecar TSV ("row\tdoc_id").

struct EmbeddingMatrix {
  std::vector<std::string> doc_ids;
  num::MatrixF rows;
};

void write_embeddings(const std::filesystem::path& bin_path, const std::filesystem::path& tsv_path,
                      const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::filesystem::path& bin_path,
                                const std::filesystem::path& tsv_path);

}  // namespace rrra::encoder
