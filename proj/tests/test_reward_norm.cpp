#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "rmrouter/errors.hpp"
#include "rmrouter/reward_norm.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace rmrouter {
namespace {

TEST(DpoLoss, ScalarValues) {
  EXPECT_NEAR(dpo_loss({-3.0, -3.0, -5.0, -5.0}), std::log(2.0), 1e-12);
  EXPECT_NEAR(dpo_loss({-1.0, -2.0, -4.0, -4.0}), 0.313262, 1e-6);
  EXPECT_NEAR(dpo_loss({-1.5, -2.0, -4.0, -4.0}, 2.0), 0.313262, 1e-6);
  EXPECT_GT(dpo_loss({-4.0, -2.0, -1.0, -1.0}), std::log(2.0));
}

TEST(BatchBaseline, Arithmetic) {
  const std::vector<PairLoss> losses = {{"a", 1.0}, {"b", 2.0}, {"c", 3.0}};
  const auto r = batch_baseline_rewards(losses);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].pair_id, "a");
  EXPECT_DOUBLE_EQ(r[0].reward, 1.0);
  EXPECT_DOUBLE_EQ(r[1].reward, 0.0);
  EXPECT_DOUBLE_EQ(r[2].reward, -1.0);
}

TEST(BatchBaseline, EqualSingleAndEmpty) {
  const std::vector<PairLoss> equal = {{"a", 0.7}, {"b", 0.7}};
  for (const auto& r : batch_baseline_rewards(equal)) EXPECT_EQ(r.reward, 0.0);
  const std::vector<PairLoss> single = {{"a", 4.2}};
  EXPECT_EQ(batch_baseline_rewards(single).front().reward, 0.0);
  EXPECT_THROW(batch_baseline_rewards(std::vector<PairLoss>{}), InputError);
}

// Property: rewards sum to zero within 1e-9 * B.
TEST(BatchBaselineProperty, SumsToZero) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto b = static_cast<std::size_t>(testgen::uniform_index(rng, 1, 256));
    std::vector<PairLoss> losses;
    for (std::size_t i = 0; i < b; ++i) losses.push_back({std::to_string(i), testgen::uniform(rng, 0.0, 5.0)});
    double total = 0.0;
    for (const auto& r : batch_baseline_rewards(losses)) total += r.reward;
    ASSERT_LE(std::abs(total), 1e-9 * static_cast<double>(b));
  }
}

TEST(Percentile, MatchesSortOracleExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = static_cast<std::size_t>(testgen::uniform_index(rng, 1, 200));
    RewardHistory history;
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
      values.push_back(testgen::uniform(rng, -1.0, 1.0));
      history.append(values.back());
    }
    for (double p : {0.0, 0.2, 0.5, 0.8, 1.0}) ASSERT_EQ(history.percentile(p), oracle::percentile(values, p));
  }
}

TEST(Percentile, CapacityKeepsMostRecent) {
  Rng rng(3);
  RewardHistory history(50);
  std::vector<double> values;
  for (int i = 0; i < 500; ++i) {
    values.push_back(testgen::uniform(rng, -1.0, 1.0));
    history.append(values.back());
  }
  ASSERT_EQ(history.size(), 50u);
  const std::vector<double> tail(values.end() - 50, values.end());
  EXPECT_EQ(history.percentile(0.2), oracle::percentile(tail, 0.2));
  EXPECT_EQ(history.percentile(0.8), oracle::percentile(tail, 0.8));
}

TEST(Percentile, Errors) {
  RewardHistory history;
  EXPECT_THROW(history.percentile(0.5), InputError);
  history.append(1.0);
  EXPECT_THROW(history.percentile(1.5), InputError);
}

TEST(QuantileNormalize, PiecewiseFormula) {
  RewardHistory history;
  for (int i = 0; i <= 100; ++i) history.append(i / 100.0);
  EXPECT_NEAR(history.percentile(0.2), 0.2, 1e-15);
  EXPECT_NEAR(history.percentile(0.8), 0.8, 1e-15);
  EXPECT_NEAR(quantile_normalize(0.5, history).value, 0.5, 1e-12);
  EXPECT_EQ(quantile_normalize(0.1, history).value, 0.0);
  EXPECT_EQ(quantile_normalize(0.95, history).value, 1.0);
  EXPECT_FALSE(quantile_normalize(0.5, history).warmup);
}

TEST(QuantileNormalize, WarmupPassThrough) {
  RewardHistory history;
  for (int i = 0; i < 31; ++i) history.append(0.1 * i);
  const auto out = quantile_normalize(0.2, history);
  EXPECT_TRUE(out.warmup);
  EXPECT_DOUBLE_EQ(out.value, 0.6);
  EXPECT_EQ(quantile_normalize(-3.0, history).value, 0.0);
  EXPECT_EQ(quantile_normalize(3.0, history).value, 1.0);
  history.append(4.0);
  EXPECT_FALSE(quantile_normalize(0.2, history).warmup);
}

TEST(QuantileNormalize, DegenerateHistory) {
  RewardHistory history;
  for (int i = 0; i < 40; ++i) history.append(0.25);
  const auto out = quantile_normalize(0.9, history);
  EXPECT_TRUE(out.degenerate);
  EXPECT_EQ(out.value, 0.5);
}

// Property: the full normalization matches a sort-based oracle exactly, is
// monotone in r and stays in [0, 1].
TEST(QuantileNormalizeProperty, OracleMonotoneBounded) {
  Rng rng(4);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = static_cast<std::size_t>(testgen::uniform_index(rng, 32, 150));
    RewardHistory history;
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
      values.push_back(testgen::uniform(rng, -1.0, 1.0));
      history.append(values.back());
    }
    const double lo = oracle::percentile(values, 0.2);
    const double hi = oracle::percentile(values, 0.8);
    std::vector<double> rs;
    for (int k = 0; k < 5; ++k) rs.push_back(testgen::uniform(rng, -1.5, 1.5));
    std::sort(rs.begin(), rs.end());
    double previous = -1.0;
    for (double r : rs) {
      const double expected = r < lo ? 0.0 : (r > hi ? 1.0 : (r - lo) / (hi - lo));
      const double got = quantile_normalize(r, history).value;
      ASSERT_EQ(got, expected);
      ASSERT_GE(got, 0.0);
      ASSERT_LE(got, 1.0);
      ASSERT_GE(got, previous);
      previous = got;
    }
  }
}

TEST(FullAdvantage, Examples) {
  const std::vector<double> equal = {1, 1, 1, 1};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(full_advantage_reward(equal, k), 1);
  EXPECT_EQ(full_advantage_reward(std::vector<double>{2, 1, 1, 1}, 0), 0);
  EXPECT_EQ(full_advantage_reward(std::vector<double>{0.5, 1, 1, 1}, 0), 1);
}

TEST(LightAdvantage, Examples) {
  EXPECT_EQ(light_advantage_reward(std::vector<double>{0.9, 1.0, 1.2}, 0.5), 1);
  EXPECT_EQ(light_advantage_reward(std::vector<double>{0.1, 0.2, 0.3}, 0.5), 0);
  EXPECT_THROW(light_advantage_reward(std::vector<double>{}, 0.5), ConfigError);
  Rng rng(1);
  const std::vector<double> four = {0.2, 0.5, 0.8, 1.1};
  EXPECT_THROW(light_advantage_reward(four, 0, 4, rng), ConfigError);
  EXPECT_THROW(light_advantage_reward(four, 0, 0, rng), ConfigError);
  EXPECT_NO_THROW(light_advantage_reward(four, 0, 3, rng));
}

// Brute force over every 4-arm permutation of the loss set and every chosen arm.
TEST(AdvantageBruteForce, AllPermutations) {
  std::vector<double> losses = {0.2, 0.5, 0.8, 1.1};
  int permutations = 0;
  do {
    ++permutations;
    for (std::size_t chosen = 0; chosen < 4; ++chosen) {
      const int full = losses[chosen] <= (0.2 + 0.5 + 0.8 + 1.1) / 4.0 ? 1 : 0;
      ASSERT_EQ(full_advantage_reward(losses, chosen), full);
      std::vector<std::size_t> others;
      for (std::size_t k = 0; k < 4; ++k) {
        if (k != chosen) others.push_back(k);
      }
      for (unsigned mask = 1; mask < 8; ++mask) {
        std::vector<double> comp;
        for (unsigned b = 0; b < 3; ++b) {
          if (mask & (1u << b)) comp.push_back(losses[others[b]]);
        }
        const double mean = std::accumulate(comp.begin(), comp.end(), 0.0) / static_cast<double>(comp.size());
        ASSERT_EQ(light_advantage_reward(comp, losses[chosen]), losses[chosen] <= mean ? 1 : 0);
      }
      for (std::size_t c = 1; c <= 3; ++c) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
          Rng a(seed);
          Rng b(seed);
          const auto idx = sample_comparators(4, chosen, c, a);
          ASSERT_EQ(idx.size(), c);
          ASSERT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), c);
          double mean = 0.0;
          for (std::size_t k : idx) {
            ASSERT_NE(k, chosen);
            mean += losses[k];
          }
          mean /= static_cast<double>(c);
          ASSERT_EQ(light_advantage_reward(losses, chosen, c, b), losses[chosen] <= mean ? 1 : 0);
        }
      }
    }
  } while (std::next_permutation(losses.begin(), losses.end()));
  EXPECT_EQ(permutations, 24);
}

TEST(SampleComparators, UniformOverSubsets) {
  Rng rng(5);
  std::map<std::vector<std::size_t>, int> counts;
  for (int i = 0; i < 30000; ++i) {
    auto idx = sample_comparators(4, 1, 2, rng);
    std::sort(idx.begin(), idx.end());
    ++counts[idx];
  }
  ASSERT_EQ(counts.size(), 3u);
  for (const auto& [subset, count] : counts) EXPECT_NEAR(count / 30000.0, 1.0 / 3.0, 0.02);
}

}  // namespace
}  // namespace rmrouter
