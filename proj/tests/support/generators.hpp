#pragma once

// Hand-rolled random instance generators for property tests.

#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rmrouter/features.hpp"
#include "rmrouter/gaussian.hpp"
#include "rmrouter/numeric.hpp"
#include "rmrouter/offline_router.hpp"

namespace rmrouter::testgen {

inline Eigen::Index uniform_index(Rng& rng, Eigen::Index lo, Eigen::Index hi) {
  return std::uniform_int_distribution<Eigen::Index>(lo, hi)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Eigen::VectorXd vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  return scale * standard_normal_vector(n, rng);
}

inline Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) m.col(c) = vector(rows, rng, scale);
  return m;
}

// Symmetric positive-definite with eigenvalues bounded away from zero.
inline Eigen::MatrixXd spd(Eigen::Index d, Rng& rng) {
  const Eigen::MatrixXd a = matrix(d, d, rng, 0.7);
  Eigen::MatrixXd s = a * a.transpose() + 0.3 * Eigen::MatrixXd::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

inline ArmPosterior posterior(Eigen::Index d, Rng& rng) {
  return ArmPosterior(vector(d, rng), spd(d, rng), uniform(rng, 0.3, 2.0));
}

inline ObservationBatch batch(Eigen::Index d, std::size_t n, Rng& rng) {
  ObservationBatch b;
  for (std::size_t i = 0; i < n; ++i) b.add(vector(d, rng), uniform(rng, -1.0, 1.0));
  return b;
}

inline OfflineRouterModel model(std::size_t n_arms, Eigen::Index d, Eigen::Index input_dim, double lambda, Rng& rng) {
  OfflineRouterModel m;
  m.fusion.weight = matrix(d, input_dim, rng, 0.5);
  m.fusion.bias = vector(d, rng, 0.3);
  m.fusion.activation = Activation::kTanh;
  m.bt_embeddings = matrix(static_cast<Eigen::Index>(n_arms), d, rng, 0.8);
  m.cls_embeddings = matrix(static_cast<Eigen::Index>(n_arms), d, rng, 0.8);
  m.lambda = lambda;
  return m;
}

// Random behavior bits; disagreements derived from them like the real pipeline.
inline PairExample example(std::size_t n_arms, Eigen::Index input_dim, Rng& rng, bool with_disagreements = true) {
  PairExample ex;
  ex.pair_id = "p" + std::to_string(rng());
  ex.input = vector(input_dim, rng);
  std::vector<bool> ok(n_arms);
  for (std::size_t n = 0; n < n_arms; ++n) {
    ok[n] = std::bernoulli_distribution(0.5)(rng);
    ex.behavior.emplace_back(n, ok[n]);
  }
  if (with_disagreements) {
    for (std::size_t w = 0; w < n_arms; ++w) {
      for (std::size_t l = 0; l < n_arms; ++l) {
        if (ok[w] && !ok[l]) ex.disagreements.emplace_back(w, l);
      }
    }
  }
  return ex;
}

}  // namespace rmrouter::testgen
