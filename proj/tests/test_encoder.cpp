#include <filesystem>

#include "doctest.h"
#include "rrra/encoder/dual_encoder.hpp"
#include "rrra/encoder/embedding_io.hpp"
#include "rrra/encoder/similarity.hpp"
#include "rrra/binary_io.hpp"
#include "rrra/error.hpp"
#include "rrra/random.hpp"

using namespace rrra;
using namespace rrra::encoder;

TEST_CASE("fnv1a64 reference vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("tokenizer normalizes case and punctuation") {
  Tokenizer tok(4096);
  CHECK(tok.words("Hello, WORLD!  foo-bar") == std::vector<std::string>{"hello", "world", "foo", "bar"});
  CHECK(tok.encode("Hello world") == tok.encode("hello   WORLD"));
  CHECK(tok.encode("").empty());
  CHECK(tok.encode(" ,.; ").empty());
  for (auto id : tok.encode("the quick brown fox")) CHECK(id < 4096u);
  CHECK_THROWS_AS(Tokenizer(0), InvalidArgument);
}

TEST_CASE("encode examples") {
  DualEncoder<float> enc(4096, 8);
  enc.initialize(3);
  const auto ids = enc.tokenize("alpha beta");
  REQUIRE(ids.size() == 2);
  const num::VectorF one = enc.encode("alpha");
  CHECK(one == enc.table().value.row(ids[0]).transpose());
  const num::VectorF two = enc.encode("alpha beta");
  for (int c = 0; c < 8; ++c) {
    const double expect =
        (static_cast<double>(enc.table().value(ids[0], c)) + enc.table().value(ids[1], c)) / 2.0;
    CHECK(two(c) == static_cast<float>(expect));
  }
  CHECK(enc.encode("alpha beta") == two);
  CHECK(enc.encode("beta alpha") == two);
  CHECK(two.size() == 8);
  CHECK_THROWS_AS(enc.encode("   "), EmptyText);
}

TEST_CASE("query and document sides share parameters") {
  DualEncoder<float> enc(512, 4);
  enc.initialize(1);
  CHECK(enc.encode_query("some text") == enc.encode_document("some text"));
  enc.table().value.setConstant(0.25f);
  CHECK(enc.encode_query("x y") == num::VectorF::Constant(4, 0.25f));
}

TEST_CASE("projection is applied and starts at identity") {
  DualEncoder<float> with(512, 4, true), without(512, 4, false);
  with.initialize(9);
  without.initialize(9);
  CHECK(with.projection().value == num::MatrixF::Identity(4, 4));
  CHECK(with.encode("a b c") == without.encode("a b c"));
  with.projection().value *= 2.0f;
  CHECK(with.encode("a b c") == (2.0f * without.encode("a b c")).eval());
  CHECK(without.parameters().size() == 1);
}

TEST_CASE("initialization is uniform(-0.05, 0.05) and seeded") {
  DualEncoder<float> a(256, 8), b(256, 8), c(256, 8);
  a.initialize(5);
  b.initialize(5);
  c.initialize(6);
  CHECK(a.table().value == b.table().value);
  CHECK(a.table().value != c.table().value);
  CHECK(a.table().value.maxCoeff() < 0.05f);
  CHECK(a.table().value.minCoeff() >= -0.05f);
}

TEST_CASE("similarity examples") {
  Eigen::Vector2d x(1, 0), y(0, 1), v(3, -4);
  CHECK(similarity(SimilarityKind::kCosine, v, v) == doctest::Approx(1.0));
  CHECK(similarity(SimilarityKind::kCosine, x, y) == 0.0);
  CHECK(similarity(SimilarityKind::kDot, Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4)) == 11.0);
  CHECK_THROWS_AS(cosine(Eigen::Vector2d(0, 0), x), DegenerateVector);
  CHECK_THROWS_AS(similarity(SimilarityKind::kDot, Eigen::Vector2d(1, 2), Eigen::Vector3d(1, 2, 3)),
                  DimensionMismatch);
}

TEST_CASE("unit interval similarity examples") {
  Eigen::Vector2d x(1, 2);
  CHECK(unit_interval_similarity(x, (3.0 * x).eval()) == doctest::Approx(1.0));
  CHECK(unit_interval_similarity(x, (-x).eval()) == doctest::Approx(0.0));
  CHECK(unit_interval_similarity(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) == 0.5);
}

TEST_CASE("cosine is invariant to positive scaling") {
  Rng rng(21);
  for (int rep = 0; rep < 200; ++rep) {
    num::VectorF q(16), d(16);
    for (int i = 0; i < 16; ++i) {
      q(i) = static_cast<float>(rng.uniform(-1, 1));
      d(i) = static_cast<float>(rng.uniform(-1, 1));
    }
    const float alpha = static_cast<float>(rng.uniform(0.01, 100.0));
    CHECK(std::abs(cosine((alpha * q).eval(), d) - cosine(q, d)) <= 1e-6);
  }
}

TEST_CASE("base score mapping into [0, 1]") {
  CHECK(base_score_unit(SimilarityKind::kDot, 0.0) == 0.5);
  CHECK(base_score_unit(SimilarityKind::kCosine, -1.0) == 0.0);
  CHECK(base_score_unit(SimilarityKind::kCosine, 1.0) == 1.0);
  CHECK(base_score_unit(SimilarityKind::kDot, 3.0) > base_score_unit(SimilarityKind::kDot, 2.0));
}

TEST_CASE("embedding export round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "rrra_emb_test";
  std::filesystem::create_directories(dir);
  EmbeddingMatrix m;
  m.doc_ids = {"d1", "d2", "d3"};
  m.rows = num::MatrixF(3, 2);
  m.rows << 1, 2, 3, 4, 5.5f, -6;
  write_embeddings(dir / "e.bin", dir / "e.tsv", m);
  const auto back = read_embeddings(dir / "e.bin", dir / "e.tsv");
  CHECK(back.doc_ids == m.doc_ids);
  CHECK(back.rows == m.rows);
  const auto bytes = io::read_file(dir / "e.bin");
  CHECK(std::string(bytes.data(), 8) == "RRRAEMB1");
  CHECK(bytes.size() == 8 + 4 + 4 + 3 * 2 * 4);
  std::filesystem::remove_all(dir);
}
