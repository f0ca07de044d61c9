#include "rrra/encoder/tokenizer.hpp"

#include "rrra/error.hpp"

namespace rrra::encoder {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tokenizer::Tokenizer(std::uint32_t bucket_count) : buckets_(bucket_count) {
  if (bucket_count == 0) throw InvalidArgument("tokenizer bucket_count must be positive");
}

std::vector<std::string> Tokenizer::words(std::string_view text) const {
  std::vector<std::string> out;
  std::string cur;
  for (char raw : text) {
    char ch = raw;
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    const bool keep = (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9');
    if (keep) {
      cur.push_back(ch);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::uint32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::uint32_t> ids;
  for (const auto& w : words(text)) ids.push_back(static_cast<std::uint32_t>(fnv1a64(w) % buckets_));
  return ids;
}

}  // namespace rrra::encoder
