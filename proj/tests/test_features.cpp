#include <cmath>
#include <string>

#include <Eigen/Core>
#include <gtest/gtest.h>

#include "rmrouter/errors.hpp"
#include "rmrouter/features.hpp"
#include "rmrouter/serialization.hpp"
#include "support/generators.hpp"
#include "support/temp_dir.hpp"

namespace rmrouter {
namespace {

PreferencePair make_pair(std::string prompt, std::string a, std::string b) {
  return PreferencePair{"p", std::move(prompt), std::move(a), std::move(b), std::nullopt};
}

bool bitwise_equal(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) return false;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] != y[i]) return false;
  }
  return true;
}

std::string random_utf8(Rng& rng, std::size_t max_bytes) {
  static const char* const kPieces[] = {"a", "Z", " ", "\n", "\t", "7", "é", "ß", "中", "文", "😀", "\xc3\xa9", "!"};
  const auto target = static_cast<std::size_t>(testgen::uniform_index(rng, 1, static_cast<Eigen::Index>(max_bytes)));
  std::string s;
  while (s.size() < target) s += kPieces[testgen::uniform_index(rng, 0, 12)];
  return s;
}

TEST(EncodeText, Deterministic) {
  const HashingEncoder enc;
  EXPECT_TRUE(bitwise_equal(enc.encode("The quick brown fox"), enc.encode("The quick brown fox")));
}

TEST(EncodeText, DistinctTextsDiffer) {
  EXPECT_FALSE(bitwise_equal(encode_text("a"), encode_text("b")));
}

TEST(EncodeText, UnitNorm) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const std::string s = random_utf8(rng, 300);
    EXPECT_NEAR(encode_text(s).norm(), 1.0, 1e-9);
  }
  EXPECT_NEAR(encode_text("x").norm(), 1.0, 1e-9);
}

TEST(EncodeText, EmptyTextThrows) { EXPECT_THROW(encode_text(""), InputError); }

TEST(FusionInput, EqualResponsesZeroDifferenceHalf) {
  const HashingEncoder enc(32);
  const auto input = pair_fusion_input(make_pair("prompt", "same answer", "same answer"), enc);
  ASSERT_EQ(input.size(), 64);
  EXPECT_EQ(input.tail(32).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FusionInput, SwapSymmetric) {
  const HashingEncoder enc(64);
  const auto x = pair_fusion_input(make_pair("why?", "because", "no reason at all"), enc);
  const auto y = pair_fusion_input(make_pair("why?", "no reason at all", "because"), enc);
  EXPECT_TRUE(bitwise_equal(x, y));
}

TEST(FusionInput, HandEvaluatedIdentityMlp) {
  Eigen::VectorXd e(2);
  e << 1, 0;
  Eigen::VectorXd e_prime(2);
  e_prime << 0, 1;
  const Eigen::VectorXd input = fusion_input(e, e_prime);
  FusionParams params{Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4), Activation::kLinear};
  const Eigen::VectorXd h = params.apply(input);
  ASSERT_EQ(h.size(), 4);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(h[i], 1.0);
}

TEST(EmbedPair, DimensionMismatchThrows) {
  Rng rng(1);
  const auto params = FusionParams::random(8, 10, 0.1, rng);
  EXPECT_THROW(embed_pair(make_pair("q", "a", "b"), params, HashingEncoder(16)), DimError);
}

TEST(EmbedPair, EmptyFieldThrows) {
  Rng rng(1);
  const auto params = FusionParams::random(8, 32, 0.1, rng);
  EXPECT_THROW(embed_pair(make_pair("q", "", "b"), params, HashingEncoder(16)), InputError);
}

// Property: swap symmetry, determinism and finiteness on random UTF-8 up to 16 KiB.
TEST(EmbedPairProperty, SymmetricDeterministicFinite) {
  Rng rng(99);
  const HashingEncoder enc;
  const auto params = FusionParams::random(64, 2 * enc.dim(), 0.5, rng);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t cap = trial < 4 ? 16 * 1024 : 512;
    const auto pair = make_pair(random_utf8(rng, cap), random_utf8(rng, cap), random_utf8(rng, cap));
    PreferencePair swapped = pair;
    std::swap(swapped.response_a, swapped.response_b);
    const auto h = embed_pair(pair, params, enc).vector;
    ASSERT_TRUE(h.allFinite()) << "trial " << trial;
    ASSERT_TRUE(bitwise_equal(h, embed_pair(pair, params, enc).vector));
    ASSERT_TRUE(bitwise_equal(h, embed_pair(swapped, params, enc).vector));
  }
}

TEST(Embeddings, LoadsThreeRows) {
  testgen::TempDir dir;
  Rng rng(2);
  EmbeddingMap map;
  for (const char* id : {"x", "y", "z"}) map[id] = PairEmbedding{testgen::vector(8, rng)};
  save_embeddings(dir / "e.jsonl", map);
  const auto back = load_embeddings(dir / "e.jsonl");
  ASSERT_EQ(back.size(), 3u);
  for (const auto& [id, emb] : map) {
    ASSERT_EQ(back.count(id), 1u);
    EXPECT_LT((back.at(id).vector - emb.vector).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Embeddings, MixedDimensionRejectedWithLine) {
  testgen::TempDir dir;
  io::write_file(dir / "e.jsonl",
                 "{\"pair_id\":\"a\",\"vector\":[1,2,3]}\n{\"pair_id\":\"b\",\"vector\":[1,2]}\n");
  try {
    load_embeddings(dir / "e.jsonl");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Embeddings, MalformedAndMissing) {
  testgen::TempDir dir;
  io::write_file(dir / "e.jsonl", "{\"pair_id\":\"a\",\"vector\":[1]}\nnot json\n");
  EXPECT_THROW(load_embeddings(dir / "e.jsonl"), FormatError);
  EXPECT_THROW(load_embeddings(dir / "missing.jsonl"), FormatError);
}

TEST(Dataset, RoundTripAndDuplicateRejection) {
  testgen::TempDir dir;
  std::vector<PreferencePair> pairs = {{"1", "p", "a", "b", Preference::kA}, {"2", "q", "c", "d", std::nullopt}};
  save_dataset(dir / "d.jsonl", pairs);
  const auto back = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].label, Preference::kA);
  EXPECT_FALSE(back[1].label.has_value());
  EXPECT_EQ(back[1].response_b, "d");
  pairs[1].pair_id = "1";
  save_dataset(dir / "dup.jsonl", pairs);
  EXPECT_THROW(load_dataset(dir / "dup.jsonl"), FormatError);
}

}  // namespace
}  // namespace rmrouter
