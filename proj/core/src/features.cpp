#include "rmrouter/features.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "rmrouter/errors.hpp"
#include "rmrouter/serialization.hpp"

namespace rmrouter {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

// Feature namespaces keep byte n-grams and word tokens from colliding by
// construction.
constexpr std::string_view kNgramSalt = "ngram:";
constexpr std::string_view kWordSalt = "word:";

void add_feature(Eigen::VectorXd& v, std::uint64_t h) {
  const auto bucket = static_cast<Eigen::Index>(mix_seed(h) % static_cast<std::uint64_t>(v.size()));
  const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
  v[bucket] += sign;
}

}  // namespace

void validate_pair(const PreferencePair& pair) {
  if (pair.prompt.empty() || pair.response_a.empty() || pair.response_b.empty()) {
    throw InputError("pair '" + pair.pair_id + "' has an empty prompt or response");
  }
}

FusionParams FusionParams::random(Eigen::Index output_dim, Eigen::Index input_dim,
                                  double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  FusionParams p;
  p.weight.resize(output_dim, input_dim);
  for (Eigen::Index r = 0; r < output_dim; ++r) {
    for (Eigen::Index c = 0; c < input_dim; ++c) {
      p.weight(r, c) = normal(rng);
    }
  }
  p.bias = Eigen::VectorXd::Zero(output_dim);
  return p;
}

Eigen::VectorXd FusionParams::pre_activation(const Eigen::VectorXd& input) const {
  if (input.size() != input_dim()) {
    throw DimError("fusion input has length " + std::to_string(input.size()) + ", expected " +
                   std::to_string(input_dim()));
  }
  return weight * input + bias;
}

Eigen::VectorXd FusionParams::apply(const Eigen::VectorXd& input) const {
  Eigen::VectorXd a = pre_activation(input);
  if (activation == Activation::kTanh) {
    a = a.array().tanh();
  }
  return a;
}

HashingEncoder::HashingEncoder(Eigen::Index dim, int ngram) : dim_(dim), ngram_(ngram) {
  if (dim < 1 || ngram < 1) {
    throw ConfigError("hashing encoder needs dim >= 1 and ngram >= 1");
  }
}

Eigen::VectorXd HashingEncoder::encode(std::string_view text) const {
  if (text.empty()) {
    throw InputError("cannot encode empty text");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);

  // Byte n-grams over the text framed by start/end markers.
  std::string framed;
  framed.reserve(text.size() + 2);
  framed.push_back('\x02');
  framed.append(text);
  framed.push_back('\x03');
  const auto n = static_cast<std::size_t>(ngram_);
  const std::uint64_t ngram_seed = fnv1a(kNgramSalt);
  if (framed.size() <= n) {
    add_feature(v, fnv1a(framed, ngram_seed));
  } else {
    for (std::size_t i = 0; i + n <= framed.size(); ++i) {
      add_feature(v, fnv1a(std::string_view(framed).substr(i, n), ngram_seed));
    }
  }

  // Lower-cased whitespace-delimited tokens.
  const std::uint64_t word_seed = fnv1a(kWordSalt);
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      add_feature(v, fnv1a(token, word_seed));
      token.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c) != 0) {
      flush();
    } else {
      token.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();

  double norm = v.norm();
  if (norm == 0.0) {
    // Every feature cancelled; fall back to one bucket keyed on the whole text.
    add_feature(v, fnv1a(text));
    norm = v.norm();
  }
  return v / norm;
}

Eigen::VectorXd encode_text(std::string_view text, const HashingEncoder& encoder) {
  return encoder.encode(text);
}

Eigen::VectorXd fusion_input(const Eigen::VectorXd& e, const Eigen::VectorXd& e_prime) {
  if (e.size() != e_prime.size()) {
    throw DimError("response encodings differ in length");
  }
  Eigen::VectorXd out(2 * e.size());
  out.head(e.size()) = e + e_prime;
  out.tail(e.size()) = (e - e_prime).cwiseAbs();
  return out;
}

Eigen::VectorXd pair_fusion_input(const PreferencePair& pair, const HashingEncoder& encoder) {
  validate_pair(pair);
  const Eigen::VectorXd e = encoder.encode(pair.prompt + "\n" + pair.response_a);
  const Eigen::VectorXd e_prime = encoder.encode(pair.prompt + "\n" + pair.response_b);
  return fusion_input(e, e_prime);
}

PairEmbedding embed_pair(const PreferencePair& pair, const FusionParams& params,
                         const HashingEncoder& encoder) {
  if (params.input_dim() != 2 * encoder.dim()) {
    throw DimError("fusion expects input length " + std::to_string(params.input_dim()) +
                   " but the encoder produces 2x" + std::to_string(encoder.dim()));
  }
  return PairEmbedding{params.apply(pair_fusion_input(pair, encoder))};
}

EmbeddingMap load_embeddings(const std::filesystem::path& path) {
  EmbeddingMap out;
  Eigen::Index dim = -1;
  io::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t line) {
    const auto id_it = obj.find("pair_id");
    const auto vec_it = obj.find("vector");
    if (id_it == obj.end() || !id_it->is_string() || vec_it == obj.end()) {
      throw FormatError(line, "embedding row needs 'pair_id' and 'vector'");
    }
    Eigen::VectorXd v = io::vector_from_json(*vec_it, "vector");
    if (v.size() == 0) {
      throw FormatError(line, "embedding vector is empty");
    }
    if (!v.allFinite()) {
      throw FormatError(line, "embedding vector has non-finite entries");
    }
    if (dim < 0) {
      dim = v.size();
    } else if (v.size() != dim) {
      throw FormatError(line, "embedding has d=" + std::to_string(v.size()) +
                                  " but earlier rows have d=" + std::to_string(dim));
    }
    const auto id = id_it->get<std::string>();
    if (!out.emplace(id, PairEmbedding{std::move(v)}).second) {
      throw FormatError(line, "duplicate pair_id '" + id + "'");
    }
  });
  return out;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMap& embeddings,
                     const std::optional<std::string>& provenance) {
  std::string text = provenance.value_or("");
  for (const auto& [id, emb] : embeddings) {
    nlohmann::json row;
    row["pair_id"] = id;
    row["vector"] = io::vector_to_json(emb.vector);
    text += row.dump();
    text += '\n';
  }
  io::write_file(path, text);
}

std::vector<PreferencePair> load_dataset(const std::filesystem::path& path) {
  std::vector<PreferencePair> pairs;
  std::set<std::string> seen;
  io::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t line) {
    PreferencePair p;
    for (const char* field : {"pair_id", "prompt", "response_a", "response_b"}) {
      if (!obj.contains(field) || !obj[field].is_string()) {
        throw FormatError(line, std::string("missing string field '") + field + "'");
      }
    }
    p.pair_id = obj["pair_id"].get<std::string>();
    p.prompt = obj["prompt"].get<std::string>();
    p.response_a = obj["response_a"].get<std::string>();
    p.response_b = obj["response_b"].get<std::string>();
    if (obj.contains("label") && !obj["label"].is_null()) {
      const auto label = obj["label"].get<std::string>();
      if (label == "A") {
        p.label = Preference::kA;
      } else if (label == "B") {
        p.label = Preference::kB;
      } else {
        throw FormatError(line, "label must be \"A\" or \"B\", got \"" + label + "\"");
      }
    }
    try {
      validate_pair(p);
    } catch (const InputError& e) {
      throw FormatError(line, e.what());
    }
    if (!seen.insert(p.pair_id).second) {
      throw FormatError(line, "duplicate pair_id '" + p.pair_id + "'");
    }
    pairs.push_back(std::move(p));
  });
  return pairs;
}

void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs,
                  const std::optional<std::string>& provenance) {
  std::string text = provenance.value_or("");
  for (const auto& p : pairs) {
    nlohmann::json row;
    row["pair_id"] = p.pair_id;
    row["prompt"] = p.prompt;
    row["response_a"] = p.response_a;
    row["response_b"] = p.response_b;
    if (p.label) {
      row["label"] = *p.label == Preference::kA ? "A" : "B";
    }
    text += row.dump();
    text += '\n';
  }
  io::write_file(path, text);
}

}  // namespace rmrouter
