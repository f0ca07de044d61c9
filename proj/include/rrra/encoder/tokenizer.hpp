#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rrra::encoder {

/// FNV-1a, 64 bit. Byte-oriented, so identical on every platform.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Lowercases ASCII, splits on anything that is not [a-z0-9], and hashes each
/// word into one of `bucket_count` ids.
class Tokenizer {
 public:
  explicit Tokenizer(std::uint32_t bucket_count = 4096);

  std::vector<std::string> words(std::string_view text) const;
  std::vector<std::uint32_t> encode(std::string_view text) const;
  std::uint32_t bucket_count() const { return buckets_; }

 private:
  std::uint32_t buckets_;
};

}  // namespace rrra::encoder
