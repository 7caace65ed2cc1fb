#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmrouter/numeric.hpp"

namespace rmrouter {

// Log-probabilities of the chosen (w) and rejected (l) responses under the
// policy and the frozen reference.
struct DpoLogProbs {
  double policy_chosen = 0.0;
  double reference_chosen = 0.0;
  double policy_rejected = 0.0;
  double reference_rejected = 0.0;
};

// -log sigmoid(beta * (log pi(w)/ref(w) - log pi(l)/ref(l))).
double dpo_loss(const DpoLogProbs& lp, double beta = 1.0);

struct PairLoss {
  std::string pair_id;
  double loss = 0.0;
};

struct PairReward {
  std::string pair_id;
  double reward = 0.0;
};

// r_i = mean(loss) - loss_i, in input order. Throws InputError on an empty batch.
std::vector<PairReward> batch_baseline_rewards(std::span<const PairLoss> losses);

// Past raw rewards, in arrival order, with an optional ring-buffer capacity.
// A sorted copy is maintained alongside so percentile queries are O(1).
class RewardHistory {
 public:
  explicit RewardHistory(std::optional<std::size_t> capacity = std::nullopt);

  void append(double value);
  void append(std::span<const double> values);

  std::size_t size() const { return arrival_.size(); }
  bool empty() const { return arrival_.empty(); }
  std::optional<std::size_t> capacity() const { return capacity_; }
  const std::deque<double>& values() const { return arrival_; }
  const std::vector<double>& sorted() const { return sorted_; }

  // Linear interpolation between order statistics at rank p * (n - 1).
  // Throws InputError when empty or p outside [0, 1].
  double percentile(double p) const;

 private:
  void evict_to_capacity();

  std::optional<std::size_t> capacity_;
  std::deque<double> arrival_;
  std::vector<double> sorted_;
};

struct QuantileConfig {
  double lower = 0.2;
  double upper = 0.8;
  // Below this many past rewards the quantiles are not used; the reward is
  // passed through clamp((r + 1) / 2, 0, 1).
  std::size_t warmup_min = 32;
};

struct NormalizedReward {
  double value = 0.0;
  double q_lo = 0.0;
  double q_hi = 0.0;
  bool warmup = false;
  bool degenerate = false;  // q_hi == q_lo; value is 0.5
};

// 0 below q_lo, 1 above q_hi, linear in between, with q_lo/q_hi the lower and
// upper percentiles of the history. The history must hold strictly earlier
// rewards only.
NormalizedReward quantile_normalize(double r, const RewardHistory& history,
                                    const QuantileConfig& config = {});

// 1 iff all_losses[chosen] <= mean(all_losses).
int full_advantage_reward(std::span<const double> all_losses, std::size_t chosen);

// 1 iff chosen_loss <= mean(comparator_losses). Throws ConfigError when no
// comparator is given.
int light_advantage_reward(std::span<const double> comparator_losses, double chosen_loss);

// Samples `comparators` distinct arms other than `chosen` uniformly without
// replacement and applies the rule above. Throws ConfigError unless
// 1 <= comparators <= all_losses.size() - 1.
int light_advantage_reward(std::span<const double> all_losses, std::size_t chosen,
                           std::size_t comparators, Rng& rng);

// The comparator indices the sampling overload would draw (same rng use).
std::vector<std::size_t> sample_comparators(std::size_t n_arms, std::size_t chosen,
                                            std::size_t comparators, Rng& rng);

}  // namespace rmrouter
