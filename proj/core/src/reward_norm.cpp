#include "rmrouter/reward_norm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rmrouter/errors.hpp"

namespace rmrouter {

double dpo_loss(const DpoLogProbs& lp, double beta) {
  if (!(beta > 0.0)) {
    throw ConfigError("DPO beta must be positive");
  }
  const double chosen = lp.policy_chosen - lp.reference_chosen;
  const double rejected = lp.policy_rejected - lp.reference_rejected;
  return neg_log_sigmoid(beta * chosen - beta * rejected);
}

std::vector<PairReward> batch_baseline_rewards(std::span<const PairLoss> losses) {
  if (losses.empty()) {
    throw InputError("cannot compute a batch baseline over an empty batch");
  }
  double total = 0.0;
  for (const auto& l : losses) {
    total += l.loss;
  }
  const double baseline = total / static_cast<double>(losses.size());
  std::vector<PairReward> out;
  out.reserve(losses.size());
  for (const auto& l : losses) {
    out.push_back(PairReward{l.pair_id, baseline - l.loss});
  }
  return out;
}

RewardHistory::RewardHistory(std::optional<std::size_t> capacity) : capacity_(capacity) {
  if (capacity_ && *capacity_ == 0) {
    throw ConfigError("reward history capacity must be positive");
  }
}

void RewardHistory::append(double value) {
  arrival_.push_back(value);
  sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), value), value);
  evict_to_capacity();
}

void RewardHistory::append(std::span<const double> values) {
  if (values.empty()) {
    return;
  }
  const auto mid = static_cast<std::ptrdiff_t>(sorted_.size());
  for (double v : values) {
    arrival_.push_back(v);
    sorted_.push_back(v);
  }
  std::sort(sorted_.begin() + mid, sorted_.end());
  std::inplace_merge(sorted_.begin(), sorted_.begin() + mid, sorted_.end());
  evict_to_capacity();
}

void RewardHistory::evict_to_capacity() {
  if (!capacity_) {
    return;
  }
  while (arrival_.size() > *capacity_) {
    const double oldest = arrival_.front();
    arrival_.pop_front();
    sorted_.erase(std::lower_bound(sorted_.begin(), sorted_.end(), oldest));
  }
}

double RewardHistory::percentile(double p) const {
  if (sorted_.empty()) {
    throw InputError("percentile of an empty reward history");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InputError("percentile rank must lie in [0, 1]");
  }
  const double rank = p * static_cast<double>(sorted_.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted_.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted_[lo] + frac * (sorted_[hi] - sorted_[lo]);
}

NormalizedReward quantile_normalize(double r, const RewardHistory& history,
                                    const QuantileConfig& config) {
  NormalizedReward out;
  if (history.size() < config.warmup_min || history.empty()) {
    out.warmup = true;
    out.value = std::clamp((r + 1.0) / 2.0, 0.0, 1.0);
    return out;
  }
  out.q_lo = history.percentile(config.lower);
  out.q_hi = history.percentile(config.upper);
  if (!(out.q_hi > out.q_lo)) {
    out.degenerate = true;
    out.value = 0.5;
    return out;
  }
  if (r < out.q_lo) {
    out.value = 0.0;
  } else if (r > out.q_hi) {
    out.value = 1.0;
  } else {
    out.value = (r - out.q_lo) / (out.q_hi - out.q_lo);
  }
  return out;
}

int full_advantage_reward(std::span<const double> all_losses, std::size_t chosen) {
  if (chosen >= all_losses.size()) {
    throw InputError("chosen arm " + std::to_string(chosen) + " outside the loss vector");
  }
  const double mean = std::accumulate(all_losses.begin(), all_losses.end(), 0.0) /
                      static_cast<double>(all_losses.size());
  return all_losses[chosen] <= mean ? 1 : 0;
}

int light_advantage_reward(std::span<const double> comparator_losses, double chosen_loss) {
  if (comparator_losses.empty()) {
    throw ConfigError("light advantage needs at least one comparator");
  }
  const double mean = std::accumulate(comparator_losses.begin(), comparator_losses.end(), 0.0) /
                      static_cast<double>(comparator_losses.size());
  return chosen_loss <= mean ? 1 : 0;
}

std::vector<std::size_t> sample_comparators(std::size_t n_arms, std::size_t chosen,
                                            std::size_t comparators, Rng& rng) {
  if (chosen >= n_arms) {
    throw InputError("chosen arm outside the pool");
  }
  if (comparators < 1 || comparators + 1 > n_arms) {
    throw ConfigError("light advantage needs 1 <= C <= pool size - 1; got C=" +
                      std::to_string(comparators) + " with " + std::to_string(n_arms) + " arms");
  }
  std::vector<std::size_t> others;
  others.reserve(n_arms - 1);
  for (std::size_t n = 0; n < n_arms; ++n) {
    if (n != chosen) {
      others.push_back(n);
    }
  }
  // Partial Fisher-Yates: the first `comparators` slots are the sample.
  for (std::size_t i = 0; i < comparators; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, others.size() - 1);
    std::swap(others[i], others[pick(rng)]);
  }
  others.resize(comparators);
  return others;
}

int light_advantage_reward(std::span<const double> all_losses, std::size_t chosen,
                           std::size_t comparators, Rng& rng) {
  const auto idx = sample_comparators(all_losses.size(), chosen, comparators, rng);
  std::vector<double> sampled;
  sampled.reserve(idx.size());
  for (std::size_t n : idx) {
    sampled.push_back(all_losses[n]);
  }
  return light_advantage_reward(sampled, all_losses[chosen]);
}

}  // namespace rmrouter
