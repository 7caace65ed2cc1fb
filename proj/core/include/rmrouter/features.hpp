#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rmrouter/numeric.hpp"

namespace rmrouter {

enum class Preference { kA, kB };

inline Preference flip(Preference p) { return p == Preference::kA ? Preference::kB : Preference::kA; }

// A prompt with two candidate responses and, for offline data, the
// ground-truth preference.
struct PreferencePair {
  std::string pair_id;
  std::string prompt;
  std::string response_a;
  std::string response_b;
  std::optional<Preference> label;
};

// Throws InputError if any text field is empty.
void validate_pair(const PreferencePair& pair);

// Fused context vector h for one preference pair.
struct PairEmbedding {
  Eigen::VectorXd vector;

  Eigen::Index dim() const { return vector.size(); }
};

enum class Activation { kTanh, kLinear };

// Single-layer fusion MLP: h = act(weight * input + bias), where input is the
// concatenation [e + e'; |e - e'|] of the two response encodings.
struct FusionParams {
  Eigen::MatrixXd weight;  // d x input_dim
  Eigen::VectorXd bias;    // d
  Activation activation = Activation::kTanh;

  Eigen::Index output_dim() const { return weight.rows(); }
  Eigen::Index input_dim() const { return weight.cols(); }

  // Entries ~ N(0, stddev^2), bias zero.
  static FusionParams random(Eigen::Index output_dim, Eigen::Index input_dim, double stddev,
                             Rng& rng);

  Eigen::VectorXd pre_activation(const Eigen::VectorXd& input) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& input) const;
};

// Deterministic signed feature-hashing text encoder: byte n-grams plus
// lower-cased whitespace tokens, hashed into dim buckets with a hash-derived
// sign, then L2-normalized. Stand-in for a pretrained transformer encoder.
class HashingEncoder {
 public:
  static constexpr Eigen::Index kDefaultDim = 256;
  static constexpr int kDefaultNgram = 3;

  explicit HashingEncoder(Eigen::Index dim = kDefaultDim, int ngram = kDefaultNgram);

  Eigen::Index dim() const { return dim_; }

  // Throws InputError on empty text.
  Eigen::VectorXd encode(std::string_view text) const;

 private:
  Eigen::Index dim_;
  int ngram_;
};

Eigen::VectorXd encode_text(std::string_view text, const HashingEncoder& encoder = HashingEncoder());

// [e + e'; |e - e'|].
Eigen::VectorXd fusion_input(const Eigen::VectorXd& e, const Eigen::VectorXd& e_prime);

// Fusion input for a pair: encodes prompt||response_a and prompt||response_b.
Eigen::VectorXd pair_fusion_input(const PreferencePair& pair, const HashingEncoder& encoder);

PairEmbedding embed_pair(const PreferencePair& pair, const FusionParams& params,
                         const HashingEncoder& encoder = HashingEncoder());

// Embedding files: JSONL, one {"pair_id", "vector"} object per line.
using EmbeddingMap = std::map<std::string, PairEmbedding>;

EmbeddingMap load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingMap& embeddings,
                     const std::optional<std::string>& provenance = std::nullopt);

// Dataset files: JSONL {"pair_id", "prompt", "response_a", "response_b", "label"?}
// with label "A" or "B". Duplicate pair ids are rejected.
std::vector<PreferencePair> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs,
                  const std::optional<std::string>& provenance = std::nullopt);

}  // namespace rmrouter
