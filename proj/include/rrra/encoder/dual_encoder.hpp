#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "rrra/encoder/tokenizer.hpp"
#include "rrra/numkernel/tape.hpp"
#include "rrra/random.hpp"

namespace rrra::encoder {

/// Shared-weight dual encoder: embedding bag with mean pooling followed by an
/// optional d×d projection. Queries and documents go through the same
/// parameters.
template <typename Scalar>
class DualEncoder {
 public:
  using Vec = num::Vector<Scalar>;

  DualEncoder(std::uint32_t bucket_count, int dim, bool use_projection = true)
      : tokenizer_(bucket_count),
        table_("encoder.embedding", bucket_count, dim),
        projection_("encoder.projection", dim, dim),
        use_projection_(use_projection) {
    projection_.value.setIdentity();
  }

  /// Table ~ uniform(-0.05, 0.05) from the seed, projection = identity.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "encoder.init"));
    for (Eigen::Index i = 0; i < table_.value.size(); ++i)
      table_.value.data()[i] = static_cast<Scalar>(rng.uniform(-0.05, 0.05));
    projection_.value.setIdentity();
  }

  int dim() const { return static_cast<int>(table_.value.cols()); }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  bool use_projection() const { return use_projection_; }

  std::vector<std::uint32_t> tokenize(std::string_view text) const {
    auto ids = tokenizer_.encode(text);
    if (ids.empty()) throw EmptyText("text has no tokens: \"" + std::string(text.substr(0, 40)) + "\"");
    return ids;
  }

  Vec encode(std::string_view text) const { return encode_ids(tokenize(text)); }
  Vec encode_query(std::string_view text) const { return encode(text); }
  Vec encode_document(std::string_view text) const { return encode(text); }

  Vec encode_ids(std::span<const std::uint32_t> ids) const {
    if (ids.empty()) throw EmptyText("encode: empty token sequence");
    Vec pooled(table_.value.cols());
    for (Eigen::Index c = 0; c < pooled.size(); ++c) {
      double acc = 0.0;
      for (std::uint32_t id : ids) acc += static_cast<double>(table_.value(id, c));
      pooled(c) = static_cast<Scalar>(acc / static_cast<double>(ids.size()));
    }
    if (!use_projection_) return pooled;
    return num::matvec_accumulate(projection_.value, pooled);
  }

  /// Same computation as encode_ids, recorded on a tape.
  num::Var encode_on_tape(num::Tape<Scalar>& tape, std::span<const std::uint32_t> ids) {
    if (ids.empty()) throw EmptyText("encode: empty token sequence");
    num::Var pooled = num::embedding_bag_mean(tape, table_, ids);
    if (!use_projection_) return pooled;
    return num::matvec(tape, projection_, pooled);
  }

  num::Parameter<Scalar>& table() { return table_; }
  const num::Parameter<Scalar>& table() const { return table_; }
  num::Parameter<Scalar>& projection() { return projection_; }
  const num::Parameter<Scalar>& projection() const { return projection_; }

  std::vector<num::Parameter<Scalar>*> parameters() {
    if (use_projection_) return {&table_, &projection_};
    return {&table_};
  }
  std::vector<const num::Parameter<Scalar>*> parameters() const {
    return {&table_, &projection_};
  }

  void zero_grad() {
    table_.zero_grad();
    projection_.zero_grad();
  }

 private:
  Tokenizer tokenizer_;
  num::Parameter<Scalar> table_;
  num::Parameter<Scalar> projection_;
  bool use_projection_;
};

}  // namespace rrra::encoder
