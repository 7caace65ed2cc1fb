#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "rmrouter/numeric.hpp"

namespace rmrouter {

// Gaussian belief N(mean, covariance) over one arm's linear weight vector,
// together with the observation noise variance of the linear reward model.
//
// The precision matrix (inverse covariance) is carried alongside the
// covariance so that conjugate updates accumulate in precision form. A lower
// Cholesky factor of the covariance is computed once per state and reused by
// every draw; if the covariance is not positive-definite the failure is
// recorded and reported by sample_weight().
//
// Instances are immutable values. Reading (sampling) is safe from several
// threads at once; updates produce a new value.
class ArmPosterior {
 public:
  ArmPosterior(Eigen::VectorXd mean, Eigen::MatrixXd covariance,
               double noise_variance, std::uint64_t update_count = 0);

  // As above, but with a known precision matrix; skips the inversion.
  ArmPosterior(Eigen::VectorXd mean, Eigen::MatrixXd covariance,
               Eigen::MatrixXd precision, double noise_variance,
               std::uint64_t update_count);

  // Degenerate zero-variance belief; sampling returns the mean exactly.
  // Used by the weighted-score ablation and tests. Cannot be updated.
  static ArmPosterior point_mass(Eigen::VectorXd mean, double noise_variance);

  Eigen::Index dim() const { return mean_.size(); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  const Eigen::MatrixXd& precision() const { return precision_; }
  double noise_variance() const { return noise_variance_; }
  std::uint64_t update_count() const { return update_count_; }
  bool zero_variance() const { return zero_variance_; }

  // Lower Cholesky factor of the covariance, or nullptr if factorization
  // failed (even after one jitter retry).
  const Eigen::MatrixXd* cholesky_factor() const {
    return factor_ ? &*factor_ : nullptr;
  }
  std::optional<std::size_t> failed_pivot() const { return failed_pivot_; }

 private:
  ArmPosterior() = default;
  void factorize();

  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd precision_;
  double noise_variance_ = 1.0;
  std::uint64_t update_count_ = 0;
  bool zero_variance_ = false;
  std::optional<Eigen::MatrixXd> factor_;
  std::optional<std::size_t> failed_pivot_;
};

// Contexts h_i and normalized rewards assigned to one arm within a step.
class ObservationBatch {
 public:
  ObservationBatch() = default;
  ObservationBatch(std::vector<Eigen::VectorXd> contexts, std::vector<double> rewards);

  void add(Eigen::VectorXd context, double reward);
  std::size_t size() const { return rewards_.size(); }
  bool empty() const { return rewards_.empty(); }
  const std::vector<Eigen::VectorXd>& contexts() const { return contexts_; }
  const std::vector<double>& rewards() const { return rewards_; }

 private:
  std::vector<Eigen::VectorXd> contexts_;
  std::vector<double> rewards_;
};

// Jitter added to the diagonal when a factorization fails once.
inline constexpr double kCholeskyJitter = 1e-9;

// Zero mean (or the given mean) and covariance prior_variance * I.
ArmPosterior make_prior(Eigen::Index d, const Eigen::VectorXd& prior_mean,
                        double prior_variance, double noise_variance);

// One draw w ~ N(mean, covariance) computed as mean + L z with z standard
// normal. Throws NonPsdError if the covariance has no Cholesky factor.
Eigen::VectorXd sample_weight(const ArmPosterior& posterior, Rng& rng);

// Conjugate Bayesian linear-regression update with every observation of the
// batch at once:
//   precision' = precision + sum_i h_i h_i^T / noise
//   mean'      = precision'^{-1} (precision * mean + sum_i r_i h_i / noise)
// An empty batch returns the posterior unchanged.
ArmPosterior posterior_update(const ArmPosterior& posterior, const ObservationBatch& batch);

nlohmann::json to_json(const ArmPosterior& posterior);
ArmPosterior arm_posterior_from_json(const nlohmann::json& doc);

inline constexpr int kPosteriorFormatVersion = 1;

}  // namespace rmrouter
