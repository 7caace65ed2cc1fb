#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "rmrouter/offline_router.hpp"
#include "rmrouter/online_router.hpp"
#include "rmrouter/reward_norm.hpp"
#include "rmrouter/sim_scenario.hpp"

namespace rmrouter::sim {

enum class RouterKind {
  kThompson,    // zero-prior Thompson sampling
  kHybrid,      // Thompson sampling with the offline prior injected
  kOffline,     // frozen offline router
  kLinUcb,      // one arm per batch
  kLinUcbPair,  // one arm per pair
  kRandom,
  kSingle,
  kMajority,
  kUwo,
  kWeighted,    // weighted-score ablation
  kOracle,      // best arm of the pair's cluster
};

struct RouterSpec {
  RouterKind kind = RouterKind::kThompson;
  std::size_t arm = 0;  // kSingle
  double alpha = 0.5;   // kWeighted

  // "thompson", "hybrid", "offline", "linucb", "linucb-pair", "random",
  // "single:<n>", "majority", "uwo", "weighted:<alpha>", "oracle".
  // Throws ConfigError listing the valid names.
  static RouterSpec parse(std::string_view text);
  std::string name() const;

  bool is_bandit() const;       // learns from rewards
  bool needs_offline() const;   // uses the trained offline model
  bool queries_all() const;     // majority / UWO
};

std::string valid_router_names();

// The comparison suite run by "--router all": every baseline, one single-RM
// run per arm and the weighted-score sweep.
std::vector<RouterSpec> default_suite(std::size_t n_arms);

enum class RewardKind { kBatchQuantile, kNegLoss, kFullAdvantage, kLightAdvantage };

RewardKind parse_reward_kind(std::string_view text);
std::string to_string(RewardKind kind);

// Stand-in for the per-pair DPO loss: drawn around correct_mean when the
// chosen RM labels the pair correctly and around incorrect_mean otherwise.
// The draw for (run seed, pair, arm) is fixed, so routers see common noise.
struct SurrogateLoss {
  double correct_mean = 0.4;
  double incorrect_mean = 0.9;
  double stddev = 0.05;

  double draw(std::uint64_t seed, std::size_t pair, std::size_t arm, bool correct) const;
};

enum class ContextSource { kOfflineEmbedding, kRawFeatures };

// Offline training defaults for synthetic feature vectors (small embedding).
TrainConfig sim_train_config();

struct ExperimentConfig {
  double sigma_sq = 1.0;
  double zero_prior_variance = 1.0;
  double injected_prior_variance = 0.02;
  SamplingMode sampling = SamplingMode::kPerPair;
  double linucb_alpha = 1.0;
  RewardKind reward = RewardKind::kBatchQuantile;
  QuantileConfig quantile;
  std::optional<std::size_t> history_capacity;
  std::size_t light_comparators = 3;
  SurrogateLoss surrogate;
  TrainConfig offline = sim_train_config();
  ContextSource context = ContextSource::kOfflineEmbedding;
  // Replaces the trained model's E_bt as the hybrid router's prior mean.
  std::optional<Eigen::MatrixXd> external_prior;
  // Used by run_experiment instead of training one model per seed.
  std::optional<OfflineRouterModel> pretrained;

  void validate() const;
};

struct RunMetrics {
  std::string router;
  std::uint64_t seed = 0;
  std::vector<double> routing_accuracy_per_step;
  std::vector<double> annotation_accuracy_per_step;
  std::vector<double> cumulative_regret;
  std::vector<std::uint64_t> arm_selection_counts;
  std::vector<std::uint64_t> rm_calls_per_step;
  double final_annotation_accuracy = 0.0;
  double final_routing_accuracy = 0.0;
  // UWO only.
  std::optional<double> mean_weight;
  std::optional<double> weighted_accuracy;

  // Means over steps [first, last).
  double mean_routing_accuracy(std::size_t first, std::size_t last) const;
  double mean_annotation_accuracy(std::size_t first, std::size_t last) const;
};

// Optional per-run logs: decision and reward JSONL lines and the final router
// state (bandit routers only).
struct ReplayLog {
  std::vector<nlohmann::json> decisions;
  std::vector<nlohmann::json> rewards;
  std::optional<nlohmann::json> final_state;
};

// Offline router trained on the dataset's offline split, with behavior data
// collected from the synthetic RMs.
OfflineRouterModel prepare_offline_model(const SimDataset& dataset, const TrainConfig& config);

// Fraction of pairs in `indices` that route_offline sends to a best arm of
// their cluster.
double evaluate_offline_routing(const OfflineRouterModel& model, const SimScenario& scenario,
                                const SimDataset& dataset, std::span<const std::size_t> indices);

// Replays the online stream: route, annotate, reward, update, record.
// `offline` is required when the router or the context source needs it.
// Throws ConfigError on dimension mismatches.
RunMetrics run_replay(const RouterSpec& router, const SimScenario& scenario, const SimDataset& dataset,
                      const OfflineRouterModel* offline, const ExperimentConfig& config,
                      std::uint64_t seed, ReplayLog* log = nullptr);

// Every router on every scenario seed. Seeds run on up to `jobs` threads;
// results are ordered router-major, then by seed, whatever `jobs` is. When
// logs is non-null it receives one ReplayLog per run in the same order.
std::vector<RunMetrics> run_experiment(const SimScenario& scenario, std::span<const RouterSpec> routers,
                                       const ExperimentConfig& config, std::size_t jobs = 1,
                                       std::vector<ReplayLog>* logs = nullptr);

// Violated invariants (empty when all hold): selection counts summing to
// B * n_steps, accuracies in [0, 1], and the per-step RM call count.
std::vector<std::string> check_run(const RunMetrics& metrics, const RouterSpec& router,
                                   const SimScenario& scenario, const ExperimentConfig& config);

// Exact number of RM calls a router makes per step.
std::uint64_t expected_calls_per_step(const RouterSpec& router, const SimScenario& scenario,
                                      const ExperimentConfig& config);

nlohmann::json step_record(const RunMetrics& metrics, std::size_t step);

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the mean; `level` is the two-sided coverage, so
// level 0.90 gives a one-sided 95% lower bound in lo.
MeanCi bootstrap_mean_ci(std::span<const double> values, double level = 0.95,
                         std::size_t resamples = 10000, std::uint64_t seed = 0);

// One-sided p-value of mean(deltas) > 0 under the paired sign-flip null.
// Exact enumeration up to 24 values, Monte Carlo beyond.
double paired_permutation_pvalue(std::span<const double> deltas, std::uint64_t seed = 0);

// Per-seed summary row of a run.
struct SeedResult {
  std::string method;
  std::uint64_t seed = 0;
  double final_annotation_accuracy = 0.0;
  double final_routing_accuracy = 0.0;
  double cumulative_regret = 0.0;
};

SeedResult summarize(const RunMetrics& metrics);

// Summary CSV: method,seed,final_annotation_accuracy,final_routing_accuracy,cumulative_regret
std::string summary_csv(std::span<const SeedResult> rows, const std::optional<std::string>& provenance);
// Lines starting with '#' are skipped. Throws InputError on malformed rows.
std::vector<SeedResult> parse_summary_csv(std::string_view text);

struct MethodSummary {
  std::string method;
  std::size_t n = 0;
  double mean = 0.0;
  MeanCi delta;
  double p_value = 1.0;
};

struct ComparisonReport {
  std::string baseline;
  std::vector<SeedResult> rows;
  std::vector<double> deltas;  // aligned with rows
  std::vector<MethodSummary> methods;

  // method,seed,final_annotation_accuracy,delta_vs_baseline
  std::string csv(const std::optional<std::string>& provenance = std::nullopt) const;
  std::string table() const;
};

// Paired per-seed deltas of final annotation accuracy against `baseline`,
// with bootstrap CIs. Throws InputError when the baseline is missing or the
// methods do not share one seed set.
ComparisonReport compare_runs(std::span<const SeedResult> results, const std::string& baseline);

}  // namespace rmrouter::sim
