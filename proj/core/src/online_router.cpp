#include "rmrouter/online_router.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "rmrouter/errors.hpp"
#include "rmrouter/serialization.hpp"

namespace rmrouter {

namespace {

void check_contexts(std::span<const PairContext> batch, Eigen::Index d) {
  for (const auto& item : batch) {
    if (item.context.size() != d) {
      throw DimError("context for pair '" + item.pair_id + "' has length " +
                     std::to_string(item.context.size()) + ", router has d=" + std::to_string(d));
    }
  }
}

void check_reward_ids(std::span<const RoutingDecision> decisions, const RewardMap& rewards) {
  std::unordered_set<std::string> known;
  known.reserve(decisions.size());
  for (const auto& dec : decisions) {
    known.insert(dec.pair_id);
  }
  for (const auto& [id, reward] : rewards) {
    if (!known.contains(id)) {
      throw InputError("reward for pair '" + id + "' which was not routed in this batch");
    }
  }
}

std::vector<double> scores_for(const std::vector<Eigen::VectorXd>& weights,
                               const Eigen::VectorXd& h) {
  std::vector<double> scores(weights.size());
  for (std::size_t n = 0; n < weights.size(); ++n) {
    scores[n] = h.dot(weights[n]);
  }
  return scores;
}

std::vector<Eigen::VectorXd> draw_all(const OnlineRouterState& state, Rng& rng) {
  std::vector<Eigen::VectorXd> weights;
  weights.reserve(state.arms.size());
  for (const auto& arm : state.arms) {
    weights.push_back(sample_weight(arm, rng));
  }
  return weights;
}

}  // namespace

OnlineRouterState init_router(std::size_t n_arms, Eigen::Index d, PriorMode prior_mode,
                              const std::optional<Eigen::MatrixXd>& offline_prior,
                              double sigma_sq, double prior_variance, SamplingMode sampling) {
  if (n_arms < 1) {
    throw ConfigError("router needs at least one arm");
  }
  if (d < 1) {
    throw ConfigError("context dimension must be at least 1");
  }
  if (prior_mode == PriorMode::kInjected) {
    if (!offline_prior) {
      throw ConfigError("injected prior mode requires an offline prior matrix");
    }
    if (offline_prior->rows() != static_cast<Eigen::Index>(n_arms) || offline_prior->cols() != d) {
      throw ConfigError("offline prior is " + std::to_string(offline_prior->rows()) + "x" +
                        std::to_string(offline_prior->cols()) + ", expected " +
                        std::to_string(n_arms) + "x" + std::to_string(d));
    }
  }
  OnlineRouterState state;
  state.config = OnlineRouterConfig{sigma_sq, prior_variance, prior_mode, sampling};
  state.selection_counts.assign(n_arms, 0);
  state.arms.reserve(n_arms);
  for (std::size_t n = 0; n < n_arms; ++n) {
    const Eigen::VectorXd mean = prior_mode == PriorMode::kInjected
                                     ? Eigen::VectorXd(offline_prior->row(static_cast<Eigen::Index>(n)).transpose())
                                     : Eigen::VectorXd::Zero(d);
    state.arms.push_back(make_prior(d, mean, prior_variance, sigma_sq));
  }
  return state;
}

std::vector<RoutingDecision> route_batch(const OnlineRouterState& state,
                                         std::span<const PairContext> batch, Rng& rng) {
  check_contexts(batch, state.dim());
  std::vector<RoutingDecision> decisions;
  decisions.reserve(batch.size());
  std::vector<Eigen::VectorXd> shared;
  if (state.config.sampling == SamplingMode::kPerBatch && !batch.empty()) {
    shared = draw_all(state, rng);
  }
  for (const auto& item : batch) {
    RoutingDecision dec;
    dec.pair_id = item.pair_id;
    dec.context = item.context;
    if (state.config.sampling == SamplingMode::kPerBatch) {
      dec.sampled_scores = scores_for(shared, item.context);
    } else {
      dec.sampled_scores = scores_for(draw_all(state, rng), item.context);
    }
    dec.chosen_arm = argmax_lowest(dec.sampled_scores);
    decisions.push_back(std::move(dec));
  }
  return decisions;
}

OnlineRouterState observe_feedback(OnlineRouterState state,
                                   std::span<const RoutingDecision> decisions,
                                   const RewardMap& rewards) {
  check_reward_ids(decisions, rewards);
  std::vector<ObservationBatch> per_arm(state.n_arms());
  for (const auto& dec : decisions) {
    if (dec.chosen_arm >= state.n_arms()) {
      throw InputError("decision for pair '" + dec.pair_id + "' names arm " +
                       std::to_string(dec.chosen_arm) + " of " + std::to_string(state.n_arms()));
    }
    ++state.selection_counts[dec.chosen_arm];
    auto it = rewards.find(dec.pair_id);
    if (it != rewards.end()) {
      per_arm[dec.chosen_arm].add(dec.context, it->second);
    }
  }
  for (std::size_t n = 0; n < state.n_arms(); ++n) {
    if (!per_arm[n].empty()) {
      state.arms[n] = posterior_update(state.arms[n], per_arm[n]);
    }
  }
  ++state.step;
  return state;
}

LinUcbState init_linucb(std::size_t n_arms, Eigen::Index d, double alpha, LinUcbMode mode) {
  if (n_arms < 1 || d < 1) {
    throw ConfigError("LinUCB needs at least one arm and d >= 1");
  }
  if (!(alpha >= 0.0)) {
    throw ConfigError("LinUCB alpha must be non-negative");
  }
  LinUcbState state;
  state.alpha = alpha;
  state.mode = mode;
  state.a.assign(n_arms, Eigen::MatrixXd::Identity(d, d));
  state.b.assign(n_arms, Eigen::VectorXd::Zero(d));
  return state;
}

namespace {

std::vector<double> ucb_scores(const LinUcbState& state, const Eigen::VectorXd& h) {
  std::vector<double> scores(state.n_arms());
  for (std::size_t n = 0; n < state.n_arms(); ++n) {
    Eigen::LLT<Eigen::MatrixXd> llt(state.a[n]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("LinUCB design matrix of arm " + std::to_string(n) + " is singular");
    }
    const Eigen::VectorXd theta = llt.solve(state.b[n]);
    const double width = h.dot(llt.solve(h));
    scores[n] = theta.dot(h) + state.alpha * std::sqrt(std::max(width, 0.0));
  }
  return scores;
}

}  // namespace

std::vector<RoutingDecision> route_linucb(const LinUcbState& state,
                                          std::span<const PairContext> batch) {
  if (state.n_arms() == 0) {
    throw ConfigError("LinUCB state has no arms");
  }
  const Eigen::Index d = state.a.front().rows();
  check_contexts(batch, d);
  std::vector<RoutingDecision> decisions;
  decisions.reserve(batch.size());
  if (batch.empty()) {
    return decisions;
  }
  std::vector<double> shared;
  if (state.mode == LinUcbMode::kPerBatch) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& item : batch) {
      mean += item.context;
    }
    mean /= static_cast<double>(batch.size());
    shared = ucb_scores(state, mean);
  }
  for (const auto& item : batch) {
    RoutingDecision dec;
    dec.pair_id = item.pair_id;
    dec.context = item.context;
    dec.sampled_scores = state.mode == LinUcbMode::kPerBatch ? shared : ucb_scores(state, item.context);
    dec.chosen_arm = argmax_lowest(dec.sampled_scores);
    decisions.push_back(std::move(dec));
  }
  return decisions;
}

LinUcbState update_linucb(LinUcbState state, std::span<const RoutingDecision> decisions,
                          const RewardMap& rewards) {
  check_reward_ids(decisions, rewards);
  for (const auto& dec : decisions) {
    if (dec.chosen_arm >= state.n_arms()) {
      throw InputError("decision names an arm outside the LinUCB state");
    }
    auto it = rewards.find(dec.pair_id);
    if (it == rewards.end()) {
      continue;
    }
    state.a[dec.chosen_arm].noalias() += dec.context * dec.context.transpose();
    state.b[dec.chosen_arm] += it->second * dec.context;
  }
  ++state.step;
  return state;
}

WeightedScoreDecision weighted_score_decision(const OfflineRouterModel& offline_model,
                                              const OnlineRouterState& online_state,
                                              const Eigen::VectorXd& h, double alpha, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("weighted-score alpha must lie in [0, 1]");
  }
  if (online_state.n_arms() != offline_model.n_arms()) {
    throw ConfigError("offline model and online router disagree on the number of arms");
  }
  if (h.size() != offline_model.dim() || h.size() != online_state.dim()) {
    throw DimError("context dimension does not match the routers");
  }
  WeightedScoreDecision out;
  const Eigen::VectorXd offline_scores = offline_model.bt_embeddings * h;
  out.offline_probs = softmax(std::span<const double>(offline_scores.data(),
                                                      static_cast<std::size_t>(offline_scores.size())));
  out.sampled_scores = scores_for(draw_all(online_state, rng), h);
  out.online_probs = softmax(out.sampled_scores);
  std::vector<double> mixed(out.online_probs.size());
  for (std::size_t n = 0; n < mixed.size(); ++n) {
    mixed[n] = alpha * out.offline_probs[n] + (1.0 - alpha) * out.online_probs[n];
  }
  out.chosen_arm = argmax_lowest(mixed);
  return out;
}

std::size_t route_weighted_score(const OfflineRouterModel& offline_model,
                                 const OnlineRouterState& online_state, const Eigen::VectorXd& h,
                                 double alpha, Rng& rng) {
  return weighted_score_decision(offline_model, online_state, h, alpha, rng).chosen_arm;
}

nlohmann::json to_json(const OnlineRouterState& state) {
  nlohmann::json doc;
  doc["kind"] = "online_router_state";
  doc["version"] = kRouterStateFormatVersion;
  doc["n_arms"] = state.n_arms();
  doc["d"] = state.dim();
  doc["step"] = state.step;
  doc["config"] = {
      {"sigma_sq", state.config.sigma_sq},
      {"prior_variance", state.config.prior_variance},
      {"prior_mode", state.config.prior_mode == PriorMode::kInjected ? "injected" : "zero"},
      {"sampling", state.config.sampling == SamplingMode::kPerBatch ? "per_batch" : "per_pair"}};
  doc["selection_counts"] = state.selection_counts;
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& arm : state.arms) {
    arms.push_back(to_json(arm));
  }
  doc["arms"] = std::move(arms);
  return doc;
}

OnlineRouterState online_state_from_json(const nlohmann::json& doc) {
  io::check_document(doc, "online_router_state", kRouterStateFormatVersion);
  OnlineRouterState state;
  const auto& config = io::require(doc, "config");
  state.config.sigma_sq = io::require(config, "sigma_sq").get<double>();
  state.config.prior_variance = io::require(config, "prior_variance").get<double>();
  const auto mode = io::require(config, "prior_mode").get<std::string>();
  if (mode == "zero") {
    state.config.prior_mode = PriorMode::kZero;
  } else if (mode == "injected") {
    state.config.prior_mode = PriorMode::kInjected;
  } else {
    throw FormatError(0, "unknown prior_mode '" + mode + "'");
  }
  const auto sampling = config.value("sampling", std::string("per_pair"));
  if (sampling == "per_pair") {
    state.config.sampling = SamplingMode::kPerPair;
  } else if (sampling == "per_batch") {
    state.config.sampling = SamplingMode::kPerBatch;
  } else {
    throw FormatError(0, "unknown sampling mode '" + sampling + "'");
  }
  state.step = io::require(doc, "step").get<std::uint64_t>();
  for (const auto& arm : io::require(doc, "arms")) {
    state.arms.push_back(arm_posterior_from_json(arm));
  }
  state.selection_counts = io::require(doc, "selection_counts").get<std::vector<std::uint64_t>>();
  if (state.selection_counts.size() != state.arms.size()) {
    throw FormatError(0, "selection_counts length does not match the number of arms");
  }
  for (const auto& arm : state.arms) {
    if (arm.dim() != state.dim() || arm.noise_variance() != state.arms.front().noise_variance()) {
      throw FormatError(0, "arms disagree on dimension or noise variance");
    }
  }
  return state;
}

nlohmann::json decision_to_json(const RoutingDecision& decision, std::uint64_t step) {
  nlohmann::json row;
  row["step"] = step;
  row["pair_id"] = decision.pair_id;
  row["chosen_arm"] = decision.chosen_arm;
  row["sampled_scores"] = decision.sampled_scores;
  return row;
}

}  // namespace rmrouter
