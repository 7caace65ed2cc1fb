#include "rmrouter/sim_harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "rmrouter/errors.hpp"
#include "rmrouter/numeric.hpp"

namespace rmrouter::sim {

using nlohmann::json;

namespace {

std::string format_alpha(double alpha) {
  std::ostringstream os;
  os << alpha;
  return os.str();
}

}  // namespace

std::string valid_router_names() {
  return "thompson, hybrid, offline, linucb, linucb-pair, random, single:<n>, majority, uwo, "
         "weighted:<alpha>, oracle, all";
}

RouterSpec RouterSpec::parse(std::string_view text) {
  RouterSpec spec;
  auto fail = [&]() -> RouterSpec {
    throw ConfigError("unknown router '" + std::string(text) + "'; valid routers: " + valid_router_names());
  };
  if (text == "thompson") {
    spec.kind = RouterKind::kThompson;
  } else if (text == "hybrid") {
    spec.kind = RouterKind::kHybrid;
  } else if (text == "offline") {
    spec.kind = RouterKind::kOffline;
  } else if (text == "linucb") {
    spec.kind = RouterKind::kLinUcb;
  } else if (text == "linucb-pair") {
    spec.kind = RouterKind::kLinUcbPair;
  } else if (text == "random") {
    spec.kind = RouterKind::kRandom;
  } else if (text == "majority") {
    spec.kind = RouterKind::kMajority;
  } else if (text == "uwo") {
    spec.kind = RouterKind::kUwo;
  } else if (text == "oracle") {
    spec.kind = RouterKind::kOracle;
  } else if (text.starts_with("single:")) {
    spec.kind = RouterKind::kSingle;
    const std::string arg(text.substr(7));
    if (arg.empty() || arg.find_first_not_of("0123456789") != std::string::npos) return fail();
    spec.arm = std::stoul(arg);
  } else if (text.starts_with("weighted:")) {
    spec.kind = RouterKind::kWeighted;
    const std::string arg(text.substr(9));
    std::size_t used = 0;
    try {
      spec.alpha = std::stod(arg, &used);
    } catch (const std::exception&) {
      return fail();
    }
    if (used != arg.size()) return fail();
    if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0)) {
      throw ConfigError("weighted-score alpha must lie in [0, 1]");
    }
  } else {
    return fail();
  }
  return spec;
}

std::string RouterSpec::name() const {
  switch (kind) {
    case RouterKind::kThompson: return "thompson";
    case RouterKind::kHybrid: return "hybrid";
    case RouterKind::kOffline: return "offline";
    case RouterKind::kLinUcb: return "linucb";
    case RouterKind::kLinUcbPair: return "linucb-pair";
    case RouterKind::kRandom: return "random";
    case RouterKind::kSingle: return "single:" + std::to_string(arm);
    case RouterKind::kMajority: return "majority";
    case RouterKind::kUwo: return "uwo";
    case RouterKind::kWeighted: return "weighted:" + format_alpha(alpha);
    case RouterKind::kOracle: return "oracle";
  }
  return "unknown";
}

bool RouterSpec::is_bandit() const {
  return kind == RouterKind::kThompson || kind == RouterKind::kHybrid || kind == RouterKind::kLinUcb ||
         kind == RouterKind::kLinUcbPair || kind == RouterKind::kWeighted;
}

bool RouterSpec::needs_offline() const {
  return kind == RouterKind::kHybrid || kind == RouterKind::kOffline || kind == RouterKind::kWeighted;
}

bool RouterSpec::queries_all() const { return kind == RouterKind::kMajority || kind == RouterKind::kUwo; }

std::vector<RouterSpec> default_suite(std::size_t n_arms) {
  std::vector<RouterSpec> suite;
  for (const char* name : {"random", "thompson", "offline", "hybrid", "linucb", "linucb-pair", "majority",
                           "uwo", "weighted:0.25", "weighted:0.5", "weighted:0.75", "oracle"}) {
    suite.push_back(RouterSpec::parse(name));
  }
  for (std::size_t n = 0; n < n_arms; ++n) {
    RouterSpec single;
    single.kind = RouterKind::kSingle;
    single.arm = n;
    suite.push_back(single);
  }
  return suite;
}

RewardKind parse_reward_kind(std::string_view text) {
  if (text == "batch_quantile") return RewardKind::kBatchQuantile;
  if (text == "neg_loss") return RewardKind::kNegLoss;
  if (text == "full_advantage") return RewardKind::kFullAdvantage;
  if (text == "light_advantage") return RewardKind::kLightAdvantage;
  throw ConfigError("unknown reward '" + std::string(text) +
                    "'; valid rewards: batch_quantile, neg_loss, full_advantage, light_advantage");
}

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::kBatchQuantile: return "batch_quantile";
    case RewardKind::kNegLoss: return "neg_loss";
    case RewardKind::kFullAdvantage: return "full_advantage";
    case RewardKind::kLightAdvantage: return "light_advantage";
  }
  return "unknown";
}

double SurrogateLoss::draw(std::uint64_t seed, std::size_t pair, std::size_t arm, bool correct) const {
  const std::uint64_t bits = derive_seed(derive_seed(derive_seed(seed, 2), pair), arm);
  const double u1 = (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  const double u2 = static_cast<double>(mix_seed(bits) >> 11) * (1.0 / 9007199254740992.0);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return (correct ? correct_mean : incorrect_mean) + stddev * z;
}

TrainConfig sim_train_config() {
  TrainConfig config;
  config.embed_dim = 8;
  return config;
}

void ExperimentConfig::validate() const {
  if (!(sigma_sq > 0.0)) throw ConfigError("sigma_sq must be positive");
  if (!(zero_prior_variance > 0.0) || !(injected_prior_variance > 0.0)) {
    throw ConfigError("prior variances must be positive");
  }
  if (!(linucb_alpha >= 0.0)) throw ConfigError("LinUCB alpha must be non-negative");
  if (!(quantile.lower >= 0.0 && quantile.lower < quantile.upper && quantile.upper <= 1.0)) {
    throw ConfigError("quantile bounds must satisfy 0 <= lower < upper <= 1");
  }
  if (history_capacity && *history_capacity == 0) throw ConfigError("history capacity must be positive");
  if (light_comparators < 1) throw ConfigError("light advantage needs at least one comparator");
  if (!(surrogate.stddev >= 0.0)) throw ConfigError("surrogate loss stddev must be non-negative");
  offline.validate();
}

double RunMetrics::mean_routing_accuracy(std::size_t first, std::size_t last) const {
  last = std::min(last, routing_accuracy_per_step.size());
  if (first >= last) return 0.0;
  double total = 0.0;
  for (std::size_t t = first; t < last; ++t) total += routing_accuracy_per_step[t];
  return total / static_cast<double>(last - first);
}

double RunMetrics::mean_annotation_accuracy(std::size_t first, std::size_t last) const {
  last = std::min(last, annotation_accuracy_per_step.size());
  if (first >= last) return 0.0;
  double total = 0.0;
  for (std::size_t t = first; t < last; ++t) total += annotation_accuracy_per_step[t];
  return total / static_cast<double>(last - first);
}

OfflineRouterModel prepare_offline_model(const SimDataset& dataset, const TrainConfig& config) {
  std::vector<PreferencePair> pairs;
  std::vector<std::pair<std::string, Eigen::VectorXd>> inputs;
  pairs.reserve(dataset.offline.size());
  inputs.reserve(dataset.offline.size());
  for (std::size_t i : dataset.offline) {
    pairs.push_back(dataset.pairs[i]);
    inputs.emplace_back(dataset.pairs[i].pair_id, dataset.features[i]);
  }
  SyntheticRmPool pool(dataset);
  const auto records = collect_behavior(pairs, pool);
  const auto examples = build_examples(inputs, records);
  return train_offline(examples, config);
}

double evaluate_offline_routing(const OfflineRouterModel& model, const SimScenario& scenario,
                                const SimDataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  std::vector<std::vector<std::size_t>> best(scenario.clusters.size());
  for (std::size_t k = 0; k < best.size(); ++k) best[k] = scenario.best_arms(k);
  std::size_t hits = 0;
  for (std::size_t i : indices) {
    const std::size_t arm = route_offline(model, model.embed(dataset.features[i]));
    const auto& b = best[dataset.cluster_of[i]];
    hits += std::find(b.begin(), b.end(), arm) != b.end() ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

namespace {

// P(majority label correct) for independent RMs; ties take RM 0's label.
double majority_correct_probability(const std::vector<double>& acc) {
  const std::size_t n = acc.size();
  if (n > 20) {
    throw ConfigError("majority regret is enumerated exactly and supports at most 20 RMs");
  }
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double p = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      p *= (mask >> j) & 1U ? acc[j] : 1.0 - acc[j];
    }
    const auto votes = static_cast<std::size_t>(std::popcount(mask));
    const bool ok = 2 * votes > n || (2 * votes == n && (mask & 1U));
    if (ok) total += p;
  }
  return total;
}

struct ClusterTables {
  std::vector<std::vector<double>> acc;
  std::vector<std::vector<bool>> is_best;
  std::vector<double> best_acc;
  std::vector<double> majority_acc;
};

ClusterTables cluster_tables(const SimScenario& scenario, bool with_majority) {
  ClusterTables t;
  for (std::size_t k = 0; k < scenario.clusters.size(); ++k) {
    auto acc = scenario.arm_accuracies(k);
    std::vector<bool> best(acc.size(), false);
    for (std::size_t n : scenario.best_arms(k)) best[n] = true;
    t.best_acc.push_back(*std::max_element(acc.begin(), acc.end()));
    t.majority_acc.push_back(with_majority ? majority_correct_probability(acc) : 0.0);
    t.acc.push_back(std::move(acc));
    t.is_best.push_back(std::move(best));
  }
  return t;
}

json reward_line(std::uint64_t step, const std::string& pair_id, double raw, const NormalizedReward* norm,
                 double value) {
  json line;
  line["step"] = step;
  line["pair_id"] = pair_id;
  line["raw_reward"] = raw;
  line["normalized_reward"] = value;
  if (norm && !norm->warmup) {
    line["q_lo"] = norm->q_lo;
    line["q_hi"] = norm->q_hi;
  } else {
    line["q_lo"] = nullptr;
    line["q_hi"] = nullptr;
  }
  return line;
}

}  // namespace

RunMetrics run_replay(const RouterSpec& router, const SimScenario& scenario, const SimDataset& dataset,
                      const OfflineRouterModel* offline, const ExperimentConfig& config, std::uint64_t seed,
                      ReplayLog* log) {
  config.validate();
  const std::size_t n_arms = dataset.n_arms;
  const std::size_t batch = scenario.pairs_per_step;
  const std::size_t n_steps = scenario.n_steps;
  if (n_arms != scenario.n_arms()) throw ConfigError("dataset and scenario disagree on the number of RMs");
  if (dataset.online.size() != batch * n_steps) {
    throw ConfigError("dataset stream holds " + std::to_string(dataset.online.size()) + " pairs, scenario needs " +
                      std::to_string(batch * n_steps));
  }
  if (router.kind == RouterKind::kSingle && router.arm >= n_arms) {
    throw ConfigError("single:" + std::to_string(router.arm) + " is outside the pool of " +
                      std::to_string(n_arms) + " RMs");
  }
  const bool uses_context = router.is_bandit() || router.kind == RouterKind::kOffline;
  const bool context_from_model = config.context == ContextSource::kOfflineEmbedding && uses_context;
  if ((router.needs_offline() || context_from_model) && offline == nullptr) {
    throw ConfigError("router '" + router.name() + "' needs a trained offline model");
  }
  if (offline) {
    if (offline->n_arms() != n_arms) throw ConfigError("offline model and scenario disagree on the number of RMs");
    if (offline->fusion.input_dim() != scenario.feature_dim) {
      throw ConfigError("offline model expects inputs of length " + std::to_string(offline->fusion.input_dim()) +
                        ", scenario features have length " + std::to_string(scenario.feature_dim));
    }
  }
  if (router.kind == RouterKind::kWeighted && config.context != ContextSource::kOfflineEmbedding) {
    throw ConfigError("the weighted-score router scores offline embeddings; use the offline context source");
  }
  const Eigen::Index d = context_from_model ? offline->dim() : scenario.feature_dim;

  const ClusterTables tables = cluster_tables(scenario, router.queries_all());

  OnlineRouterState ts;
  LinUcbState ucb;
  switch (router.kind) {
    case RouterKind::kThompson:
    case RouterKind::kWeighted:
      ts = init_router(n_arms, d, PriorMode::kZero, std::nullopt, config.sigma_sq, config.zero_prior_variance,
                       config.sampling);
      break;
    case RouterKind::kHybrid: {
      Eigen::MatrixXd prior = config.external_prior ? *config.external_prior : export_prior(*offline);
      if (prior.rows() != static_cast<Eigen::Index>(n_arms) || prior.cols() != d) {
        throw ConfigError("prior matrix is " + std::to_string(prior.rows()) + "x" + std::to_string(prior.cols()) +
                          ", router needs " + std::to_string(n_arms) + "x" + std::to_string(d));
      }
      ts = init_router(n_arms, d, PriorMode::kInjected, prior, config.sigma_sq, config.injected_prior_variance,
                       config.sampling);
      break;
    }
    case RouterKind::kLinUcb:
      ucb = init_linucb(n_arms, d, config.linucb_alpha, LinUcbMode::kPerBatch);
      break;
    case RouterKind::kLinUcbPair:
      ucb = init_linucb(n_arms, d, config.linucb_alpha, LinUcbMode::kPerPair);
      break;
    default:
      break;
  }

  RewardHistory history(config.history_capacity);
  Rng route_rng(derive_seed(seed, 11));
  Rng comparator_rng(derive_seed(seed, 13));
  Rng random_rng(derive_seed(seed, 17));
  SyntheticRmPool pool(dataset);

  RunMetrics m;
  m.router = router.name();
  m.seed = seed;
  m.arm_selection_counts.assign(n_arms, 0);
  m.routing_accuracy_per_step.reserve(n_steps);
  m.annotation_accuracy_per_step.reserve(n_steps);
  m.cumulative_regret.reserve(n_steps);
  m.rm_calls_per_step.reserve(n_steps);

  double regret = 0.0;
  std::size_t routed_hits = 0;
  std::size_t annotated_hits = 0;
  double weight_sum = 0.0;
  double weighted_hits = 0.0;

  std::vector<PairContext> contexts(batch);
  std::vector<std::size_t> chosen(batch);
  std::vector<bool> correct(batch);
  std::vector<RoutingDecision> decisions;
  std::vector<std::vector<Preference>> answers(n_arms);

  for (std::size_t t = 0; t < n_steps; ++t) {
    const std::uint64_t calls_before = pool.calls();
    const std::size_t* idx = dataset.online.data() + t * batch;

    if (uses_context) {
      for (std::size_t j = 0; j < batch; ++j) {
        const std::size_t i = idx[j];
        contexts[j].pair_id = dataset.pairs[i].pair_id;
        contexts[j].context = context_from_model ? offline->embed(dataset.features[i]).vector : dataset.features[i];
      }
    }

    decisions.clear();
    switch (router.kind) {
      case RouterKind::kThompson:
      case RouterKind::kHybrid:
        decisions = route_batch(ts, contexts, route_rng);
        break;
      case RouterKind::kLinUcb:
      case RouterKind::kLinUcbPair:
        decisions = route_linucb(ucb, contexts);
        break;
      case RouterKind::kWeighted:
        for (std::size_t j = 0; j < batch; ++j) {
          auto w = weighted_score_decision(*offline, ts, contexts[j].context, router.alpha, route_rng);
          decisions.push_back(
              RoutingDecision{contexts[j].pair_id, w.chosen_arm, std::move(w.sampled_scores), contexts[j].context});
        }
        break;
      case RouterKind::kOffline:
        for (std::size_t j = 0; j < batch; ++j) {
          const PairEmbedding h{contexts[j].context};
          const Eigen::VectorXd s = offline->bt_scores(h);
          decisions.push_back(RoutingDecision{contexts[j].pair_id, argmax_lowest(s),
                                              std::vector<double>(s.data(), s.data() + s.size()), {}});
        }
        break;
      default:
        break;
    }

    std::size_t step_routed = 0;
    std::size_t step_annotated = 0;
    for (std::size_t j = 0; j < batch; ++j) {
      const std::size_t i = idx[j];
      const PreferencePair& pair = dataset.pairs[i];
      const std::size_t k = dataset.cluster_of[i];
      const Preference truth = *pair.label;
      std::size_t arm = 0;
      double p_chosen = 0.0;
      if (router.queries_all()) {
        std::size_t votes_a = 0;
        std::vector<Preference> votes(n_arms);
        for (std::size_t n = 0; n < n_arms; ++n) {
          votes[n] = pool.annotate(pair, n);
          votes_a += votes[n] == Preference::kA ? 1 : 0;
        }
        const std::size_t votes_b = n_arms - votes_a;
        Preference label = votes[0];
        if (votes_a != votes_b) label = votes_a > votes_b ? Preference::kA : Preference::kB;
        while (votes[arm] != label) ++arm;
        correct[j] = label == truth;
        p_chosen = tables.majority_acc[k];
        const double weight = static_cast<double>(std::max(votes_a, votes_b)) / static_cast<double>(n_arms);
        weight_sum += weight;
        weighted_hits += correct[j] ? weight : 0.0;
      } else {
        switch (router.kind) {
          case RouterKind::kRandom:
            arm = std::uniform_int_distribution<std::size_t>(0, n_arms - 1)(random_rng);
            break;
          case RouterKind::kSingle:
            arm = router.arm;
            break;
          case RouterKind::kOracle:
            arm = static_cast<std::size_t>(
                std::find(tables.is_best[k].begin(), tables.is_best[k].end(), true) - tables.is_best[k].begin());
            break;
          default:
            arm = decisions[j].chosen_arm;
            break;
        }
        correct[j] = pool.annotate(pair, arm) == truth;
        p_chosen = tables.acc[k][arm];
      }
      chosen[j] = arm;
      ++m.arm_selection_counts[arm];
      step_routed += tables.is_best[k][arm] ? 1 : 0;
      step_annotated += correct[j] ? 1 : 0;
      regret += tables.best_acc[k] - p_chosen;
    }

    if (router.is_bandit()) {
      std::vector<double> losses(batch);
      for (std::size_t j = 0; j < batch; ++j) {
        losses[j] = config.surrogate.draw(seed, idx[j], chosen[j], correct[j]);
      }
      RewardMap rewards;
      rewards.reserve(batch);
      auto loss_of = [&](std::size_t j, std::size_t n) {
        const PreferencePair& pair = dataset.pairs[idx[j]];
        return config.surrogate.draw(seed, idx[j], n, pool.annotate(pair, n) == *pair.label);
      };
      switch (config.reward) {
        case RewardKind::kBatchQuantile: {
          std::vector<PairLoss> pl(batch);
          for (std::size_t j = 0; j < batch; ++j) pl[j] = PairLoss{decisions[j].pair_id, losses[j]};
          const auto raw = batch_baseline_rewards(pl);
          std::vector<double> raw_values(batch);
          for (std::size_t j = 0; j < batch; ++j) {
            const NormalizedReward norm = quantile_normalize(raw[j].reward, history, config.quantile);
            rewards[raw[j].pair_id] = norm.value;
            raw_values[j] = raw[j].reward;
            if (log) log->rewards.push_back(reward_line(t, raw[j].pair_id, raw[j].reward, &norm, norm.value));
          }
          history.append(raw_values);
          break;
        }
        case RewardKind::kNegLoss:
          for (std::size_t j = 0; j < batch; ++j) {
            rewards[decisions[j].pair_id] = -losses[j];
            if (log) log->rewards.push_back(reward_line(t, decisions[j].pair_id, -losses[j], nullptr, -losses[j]));
          }
          break;
        case RewardKind::kFullAdvantage:
          for (std::size_t j = 0; j < batch; ++j) {
            std::vector<double> all(n_arms);
            for (std::size_t n = 0; n < n_arms; ++n) all[n] = n == chosen[j] ? losses[j] : loss_of(j, n);
            const double r = full_advantage_reward(all, chosen[j]);
            rewards[decisions[j].pair_id] = r;
            if (log) log->rewards.push_back(reward_line(t, decisions[j].pair_id, -losses[j], nullptr, r));
          }
          break;
        case RewardKind::kLightAdvantage:
          for (std::size_t j = 0; j < batch; ++j) {
            const auto comp = sample_comparators(n_arms, chosen[j], config.light_comparators, comparator_rng);
            std::vector<double> comp_losses;
            for (std::size_t n : comp) comp_losses.push_back(loss_of(j, n));
            const double r = light_advantage_reward(comp_losses, losses[j]);
            rewards[decisions[j].pair_id] = r;
            if (log) log->rewards.push_back(reward_line(t, decisions[j].pair_id, -losses[j], nullptr, r));
          }
          break;
      }
      if (router.kind == RouterKind::kLinUcb || router.kind == RouterKind::kLinUcbPair) {
        ucb = update_linucb(std::move(ucb), decisions, rewards);
      } else {
        ts = observe_feedback(std::move(ts), decisions, rewards);
      }
    }

    if (log) {
      for (std::size_t j = 0; j < batch; ++j) {
        if (!decisions.empty()) {
          log->decisions.push_back(decision_to_json(decisions[j], t));
        } else {
          log->decisions.push_back({{"step", t},
                                    {"pair_id", dataset.pairs[idx[j]].pair_id},
                                    {"chosen_arm", chosen[j]},
                                    {"sampled_scores", json::array()}});
        }
      }
    }

    routed_hits += step_routed;
    annotated_hits += step_annotated;
    m.routing_accuracy_per_step.push_back(static_cast<double>(step_routed) / static_cast<double>(batch));
    m.annotation_accuracy_per_step.push_back(static_cast<double>(step_annotated) / static_cast<double>(batch));
    m.cumulative_regret.push_back(regret);
    m.rm_calls_per_step.push_back(pool.calls() - calls_before);
  }

  const auto total = static_cast<double>(batch * n_steps);
  m.final_routing_accuracy = static_cast<double>(routed_hits) / total;
  m.final_annotation_accuracy = static_cast<double>(annotated_hits) / total;
  if (router.kind == RouterKind::kUwo) {
    m.mean_weight = weight_sum / total;
    m.weighted_accuracy = weight_sum > 0.0 ? weighted_hits / weight_sum : 0.0;
  }
  if (log && (router.kind == RouterKind::kThompson || router.kind == RouterKind::kHybrid ||
              router.kind == RouterKind::kWeighted)) {
    log->final_state = to_json(ts);
  }
  return m;
}

std::vector<RunMetrics> run_experiment(const SimScenario& scenario, std::span<const RouterSpec> routers,
                                       const ExperimentConfig& config, std::size_t jobs,
                                       std::vector<ReplayLog>* logs) {
  scenario.validate();
  config.validate();
  const std::size_t n_seeds = scenario.seeds.size();
  const std::size_t n_routers = routers.size();
  bool want_model = false;
  for (const auto& r : routers) {
    want_model = want_model || r.needs_offline() ||
                 ((r.is_bandit() || r.kind == RouterKind::kOffline) && config.context == ContextSource::kOfflineEmbedding);
  }

  std::vector<RunMetrics> out(n_seeds * n_routers);
  if (logs) logs->assign(n_seeds * n_routers, ReplayLog{});
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t s = next.fetch_add(1);
      if (s >= n_seeds) return;
      try {
        const std::uint64_t seed = scenario.seeds[s];
        const SimDataset dataset = generate_scenario(scenario, seed);
        std::optional<OfflineRouterModel> model;
        if (want_model && config.pretrained) {
          model = *config.pretrained;
        } else if (want_model) {
          TrainConfig tc = config.offline;
          tc.seed = derive_seed(config.offline.seed, seed);
          model = prepare_offline_model(dataset, tc);
        }
        for (std::size_t r = 0; r < n_routers; ++r) {
          const std::size_t slot = r * n_seeds + s;
          out[slot] = run_replay(routers[r], scenario, dataset, model ? &*model : nullptr, config, seed,
                                 logs ? &(*logs)[slot] : nullptr);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_seeds);
        return;
      }
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, n_seeds));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < n_threads; ++k) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::uint64_t expected_calls_per_step(const RouterSpec& router, const SimScenario& scenario,
                                      const ExperimentConfig& config) {
  const std::uint64_t b = scenario.pairs_per_step;
  const std::uint64_t n = scenario.n_arms();
  if (router.queries_all()) return n * b;
  if (router.is_bandit()) {
    if (config.reward == RewardKind::kFullAdvantage) return n * b;
    if (config.reward == RewardKind::kLightAdvantage) return (1 + config.light_comparators) * b;
  }
  return b;
}

std::vector<std::string> check_run(const RunMetrics& metrics, const RouterSpec& router, const SimScenario& scenario,
                                   const ExperimentConfig& config) {
  std::vector<std::string> problems;
  const std::string who = metrics.router + " seed " + std::to_string(metrics.seed) + ": ";
  std::uint64_t selected = 0;
  for (auto c : metrics.arm_selection_counts) selected += c;
  if (selected != scenario.pairs_per_step * scenario.n_steps) {
    problems.push_back(who + "selection counts sum to " + std::to_string(selected) + ", expected " +
                       std::to_string(scenario.pairs_per_step * scenario.n_steps));
  }
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (std::size_t t = 0; t < metrics.routing_accuracy_per_step.size(); ++t) {
    if (!in_unit(metrics.routing_accuracy_per_step[t]) || !in_unit(metrics.annotation_accuracy_per_step[t])) {
      problems.push_back(who + "accuracy outside [0, 1] at step " + std::to_string(t));
      break;
    }
  }
  const std::uint64_t want = expected_calls_per_step(router, scenario, config);
  for (std::size_t t = 0; t < metrics.rm_calls_per_step.size(); ++t) {
    if (metrics.rm_calls_per_step[t] != want) {
      problems.push_back(who + std::to_string(metrics.rm_calls_per_step[t]) + " RM calls at step " +
                         std::to_string(t) + ", expected " + std::to_string(want));
      break;
    }
  }
  return problems;
}

json step_record(const RunMetrics& metrics, std::size_t step) {
  return {{"router", metrics.router},
          {"seed", metrics.seed},
          {"step", step},
          {"routing_accuracy", metrics.routing_accuracy_per_step.at(step)},
          {"annotation_accuracy", metrics.annotation_accuracy_per_step.at(step)},
          {"cumulative_regret", metrics.cumulative_regret.at(step)},
          {"rm_calls", metrics.rm_calls_per_step.at(step)}};
}

namespace {

double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double rank = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (rank - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double mean_of(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

}  // namespace

MeanCi bootstrap_mean_ci(std::span<const double> values, double level, std::size_t resamples, std::uint64_t seed) {
  if (values.empty()) throw InputError("bootstrap of an empty sample");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  if (resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  MeanCi out;
  out.mean = mean_of(values);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double total = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) total += values[pick(rng)];
    m = total / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  out.lo = sorted_quantile(means, tail);
  out.hi = sorted_quantile(means, 1.0 - tail);
  return out;
}

double paired_permutation_pvalue(std::span<const double> deltas, std::uint64_t seed) {
  if (deltas.empty()) throw InputError("permutation test of an empty sample");
  const std::size_t n = deltas.size();
  double observed = 0.0;
  for (double d : deltas) observed += d;
  const double tol = 1e-12 * (1.0 + std::abs(observed));
  if (n <= 24) {
    // Gray-code walk over all sign patterns; bit k set means delta k flipped.
    double sum = observed;
    std::uint64_t at_least = 0;
    std::uint64_t gray = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t i = 0; i < total; ++i) {
      if (i > 0) {
        const int k = std::countr_zero(i);
        gray ^= std::uint64_t{1} << k;
        sum += (gray >> k) & 1U ? -2.0 * deltas[k] : 2.0 * deltas[k];
      }
      if (sum >= observed - tol) ++at_least;
    }
    return static_cast<double>(at_least) / static_cast<double>(total);
  }
  constexpr std::size_t kDraws = 200000;
  Rng rng(seed);
  std::uint64_t at_least = 0;
  for (std::size_t r = 0; r < kDraws; ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; k += 64) {
      std::uint64_t bits = rng();
      for (std::size_t j = k; j < std::min(n, k + 64); ++j, bits >>= 1) {
        sum += bits & 1U ? -deltas[j] : deltas[j];
      }
    }
    if (sum >= observed - tol) ++at_least;
  }
  return static_cast<double>(at_least + 1) / static_cast<double>(kDraws + 1);
}

SeedResult summarize(const RunMetrics& metrics) {
  return SeedResult{metrics.router, metrics.seed, metrics.final_annotation_accuracy, metrics.final_routing_accuracy,
                    metrics.cumulative_regret.empty() ? 0.0 : metrics.cumulative_regret.back()};
}

namespace {

std::string num(double v) { return json(v).dump(); }

std::string comment_lines(const std::optional<std::string>& text) {
  if (!text) return {};
  std::string out;
  std::istringstream in(*text);
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

}  // namespace

std::string summary_csv(std::span<const SeedResult> rows, const std::optional<std::string>& provenance) {
  std::string out = comment_lines(provenance);
  out += "method,seed,final_annotation_accuracy,final_routing_accuracy,cumulative_regret\n";
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.seed) + "," + num(r.final_annotation_accuracy) + "," +
           num(r.final_routing_accuracy) + "," + num(r.cumulative_regret) + "\n";
  }
  return out;
}

std::vector<SeedResult> parse_summary_csv(std::string_view text) {
  std::vector<SeedResult> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.starts_with("method,")) continue;
    std::vector<std::string> fields;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) fields.push_back(cell);
    if (fields.size() < 3) {
      throw InputError("line " + std::to_string(line_no) + ": expected at least method,seed,final_annotation_accuracy");
    }
    try {
      SeedResult r;
      r.method = fields[0];
      r.seed = std::stoull(fields[1]);
      r.final_annotation_accuracy = std::stod(fields[2]);
      if (fields.size() > 3) r.final_routing_accuracy = std::stod(fields[3]);
      if (fields.size() > 4) r.cumulative_regret = std::stod(fields[4]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw InputError("line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

ComparisonReport compare_runs(std::span<const SeedResult> results, const std::string& baseline) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::uint64_t, double>> by_method;
  for (const auto& r : results) {
    if (!by_method.count(r.method)) order.push_back(r.method);
    if (!by_method[r.method].emplace(r.seed, r.final_annotation_accuracy).second) {
      throw InputError("method '" + r.method + "' has seed " + std::to_string(r.seed) + " twice");
    }
  }
  auto base = by_method.find(baseline);
  if (base == by_method.end()) throw InputError("baseline '" + baseline + "' not among the runs");
  if (order.size() < 2) throw InputError("comparison needs at least two methods");
  for (const auto& [method, seeds] : by_method) {
    bool same = seeds.size() == base->second.size();
    for (auto it = seeds.cbegin(), jt = base->second.cbegin(); same && it != seeds.end(); ++it, ++jt) {
      same = it->first == jt->first;
    }
    if (!same) throw InputError("method '" + method + "' was run on a different seed set than '" + baseline + "'");
  }

  ComparisonReport report;
  report.baseline = baseline;
  for (const auto& method : order) {
    MethodSummary summary;
    summary.method = method;
    std::vector<double> values;
    std::vector<double> deltas;
    for (const auto& [seed, acc] : by_method[method]) {
      const double delta = acc - base->second.at(seed);
      report.rows.push_back(SeedResult{method, seed, acc, 0.0, 0.0});
      report.deltas.push_back(delta);
      values.push_back(acc);
      deltas.push_back(delta);
    }
    summary.n = values.size();
    summary.mean = mean_of(values);
    summary.delta = bootstrap_mean_ci(deltas);
    summary.p_value = paired_permutation_pvalue(deltas);
    report.methods.push_back(summary);
  }
  // Carry the remaining columns through.
  for (auto& row : report.rows) {
    for (const auto& r : results) {
      if (r.method == row.method && r.seed == row.seed) {
        row = r;
        break;
      }
    }
  }
  return report;
}

std::string ComparisonReport::csv(const std::optional<std::string>& provenance) const {
  std::string out = comment_lines(provenance);
  out += "method,seed,final_annotation_accuracy,delta_vs_baseline\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out += rows[k].method + "," + std::to_string(rows[k].seed) + "," + num(rows[k].final_annotation_accuracy) + "," +
           num(deltas[k]) + "\n";
  }
  return out;
}

std::string ComparisonReport::table() const {
  std::size_t width = std::string("method").size();
  for (const auto& m : methods) width = std::max(width, m.method.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %5s %9s %10s %21s %9s\n", static_cast<int>(width), "method", "n", "mean_acc",
                "delta", "95% CI", "p");
  out += buf;
  for (const auto& m : methods) {
    std::snprintf(buf, sizeof buf, "%-*s %5zu %9.4f %+10.4f   [%+8.4f, %+8.4f] %9.2g\n", static_cast<int>(width),
                  m.method.c_str(), m.n, m.mean, m.delta.mean, m.delta.lo, m.delta.hi, m.p_value);
    out += buf;
  }
  out += "baseline: " + baseline + "\n";
  return out;
}

}  // namespace rmrouter::sim
