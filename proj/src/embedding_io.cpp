#include "rrra/encoder/embedding_io.hpp"

#include <fstream>
#include <sstream>

#include "rrra/binary_io.hpp"

namespace rrra::encoder {

namespace {
constexpr std::string_view kMagic = "RRRAEMB1";
}

void write_embeddings(const std::filesystem::path& bin_path, const std::filesystem::path& tsv_path,
                      const EmbeddingMatrix& m) {
  if (static_cast<Eigen::Index>(m.doc_ids.size()) != m.rows.rows()) {
    throw DimensionMismatch("write_embeddings: " + std::to_string(m.doc_ids.size()) + " ids for " +
                            std::to_string(m.rows.rows()) + " rows");
  }
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(m.rows.rows()));
  w.u32(static_cast<std::uint32_t>(m.rows.cols()));
  for (Eigen::Index i = 0; i < m.rows.size(); ++i) w.f32(m.rows.data()[i]);
  io::write_file_atomic(bin_path, w.buffer());

  std::ostringstream tsv;
  for (std::size_t i = 0; i < m.doc_ids.size(); ++i) tsv << i << '\t' << m.doc_ids[i] << '\n';
  io::write_text_atomic(tsv_path, tsv.str());
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& bin_path,
                                const std::filesystem::path& tsv_path) {
  const auto bytes = io::read_file(bin_path);
  io::ByteReader r(bytes.data(), bytes.size(), bin_path.string());
  if (r.bytes(kMagic.size()) != kMagic) throw DataError(bin_path.string() + ": bad magic");
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (r.remaining() != static_cast<std::size_t>(count) * dim * 4) {
    throw DataError(bin_path.string() + ": payload size does not match header");
  }
  EmbeddingMatrix m;
  m.rows.resize(count, dim);
  for (Eigen::Index i = 0; i < m.rows.size(); ++i) m.rows.data()[i] = r.f32();

  std::ifstream in(tsv_path);
  if (!in) throw DataError("cannot open " + tsv_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(tsv_path.string() + ": malformed line '" + line + "'");
    if (std::stoul(line.substr(0, tab)) != m.doc_ids.size())
      throw DataError(tsv_path.string() + ": rows out of order");
    m.doc_ids.push_back(line.substr(tab + 1));
  }
  if (m.doc_ids.size() != count) throw DataError(tsv_path.string() + ": row count mismatch");
  return m;
}

}  // namespace rrra::encoder
