#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "rmrouter/gaussian.hpp"
#include "rmrouter/numeric.hpp"
#include "rmrouter/offline_router.hpp"

namespace rmrouter {

enum class PriorMode { kZero, kInjected };

// kPerPair draws fresh weights for every pair; kPerBatch draws once per arm and
// reuses them for the whole batch.
enum class SamplingMode { kPerPair, kPerBatch };

struct OnlineRouterConfig {
  double sigma_sq = 1.0;
  double prior_variance = 1.0;
  PriorMode prior_mode = PriorMode::kZero;
  SamplingMode sampling = SamplingMode::kPerPair;
};

// Per-arm posteriors of the Thompson-sampling router. All arms share d and the
// noise variance. step counts observed batches.
struct OnlineRouterState {
  std::vector<ArmPosterior> arms;
  std::uint64_t step = 0;
  std::vector<std::uint64_t> selection_counts;
  OnlineRouterConfig config;

  std::size_t n_arms() const { return arms.size(); }
  Eigen::Index dim() const { return arms.empty() ? 0 : arms.front().dim(); }
};

// One pair to route: its id and its context vector h.
struct PairContext {
  std::string pair_id;
  Eigen::VectorXd context;
};

struct RoutingDecision {
  std::string pair_id;
  std::size_t chosen_arm = 0;
  std::vector<double> sampled_scores;
  Eigen::VectorXd context;
};

// Zero mode: mean 0. Injected mode: mean of arm n is offline_prior row n.
// Covariance prior_variance * I in both cases.
OnlineRouterState init_router(std::size_t n_arms, Eigen::Index d, PriorMode prior_mode,
                              const std::optional<Eigen::MatrixXd>& offline_prior,
                              double sigma_sq, double prior_variance,
                              SamplingMode sampling = SamplingMode::kPerPair);

// Thompson sampling: for every pair, one weight draw per arm (in arm order),
// score <h, w>, pick the argmax. Does not modify the state.
std::vector<RoutingDecision> route_batch(const OnlineRouterState& state,
                                         std::span<const PairContext> batch, Rng& rng);

using RewardMap = std::unordered_map<std::string, double>;

// Groups rewarded decisions by chosen arm and applies one batched posterior
// update per arm. Decisions without a reward are ignored; a reward whose
// pair_id has no decision throws InputError. Increments step by one.
OnlineRouterState observe_feedback(OnlineRouterState state,
                                   std::span<const RoutingDecision> decisions,
                                   const RewardMap& rewards);

// LinUCB baseline (disjoint model, A = I + sum h h^T, b = sum r h per arm).
enum class LinUcbMode { kPerBatch, kPerPair };

struct LinUcbState {
  std::vector<Eigen::MatrixXd> a;
  std::vector<Eigen::VectorXd> b;
  double alpha = 1.0;
  LinUcbMode mode = LinUcbMode::kPerBatch;
  std::uint64_t step = 0;

  std::size_t n_arms() const { return a.size(); }
};

LinUcbState init_linucb(std::size_t n_arms, Eigen::Index d, double alpha,
                        LinUcbMode mode = LinUcbMode::kPerBatch);

// UCB score theta^T h + alpha * sqrt(h^T A^{-1} h) per arm. In per-batch mode
// h is the batch-mean context and every pair gets the same arm.
std::vector<RoutingDecision> route_linucb(const LinUcbState& state,
                                          std::span<const PairContext> batch);

LinUcbState update_linucb(LinUcbState state, std::span<const RoutingDecision> decisions,
                          const RewardMap& rewards);

// Weighted-score ablation: softmax of the offline BT scores mixed with the
// softmax of Thompson-sampled scores from a zero-prior online router,
// s = alpha * s_offline + (1 - alpha) * s_online. Draws from rng exactly as a
// single-pair route_batch would.
struct WeightedScoreDecision {
  std::size_t chosen_arm = 0;
  std::vector<double> offline_probs;
  std::vector<double> online_probs;
  std::vector<double> sampled_scores;
};

WeightedScoreDecision weighted_score_decision(const OfflineRouterModel& offline_model,
                                              const OnlineRouterState& online_state,
                                              const Eigen::VectorXd& h, double alpha, Rng& rng);

std::size_t route_weighted_score(const OfflineRouterModel& offline_model,
                                 const OnlineRouterState& online_state,
                                 const Eigen::VectorXd& h, double alpha, Rng& rng);

inline constexpr int kRouterStateFormatVersion = 1;

nlohmann::json to_json(const OnlineRouterState& state);
OnlineRouterState online_state_from_json(const nlohmann::json& doc);

// Decision log line: {"step", "pair_id", "chosen_arm", "sampled_scores"}.
nlohmann::json decision_to_json(const RoutingDecision& decision, std::uint64_t step);

}  // namespace rmrouter
