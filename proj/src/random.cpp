#include "rrra/random.hpp"

#include "rrra/encoder/tokenizer.hpp"

namespace rrra {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
  return mix64(mix64(seed ^ encoder::fnv1a64(stream)) + index);
}

}  // namespace rrra
