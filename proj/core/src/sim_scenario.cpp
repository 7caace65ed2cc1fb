#include "rmrouter/sim_scenario.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "rmrouter/errors.hpp"
#include "rmrouter/numeric.hpp"
#include "rmrouter/serialization.hpp"

namespace rmrouter::sim {

using nlohmann::json;

double SyntheticRm::accuracy(int cluster_id) const {
  auto it = accuracy_profile.find(cluster_id);
  if (it == accuracy_profile.end()) {
    throw ConfigError("RM " + std::to_string(rm_id) + " has no accuracy for cluster " +
                      std::to_string(cluster_id));
  }
  return it->second;
}

void SimScenario::validate() const {
  if (feature_dim < 1) throw ConfigError("feature_dim must be at least 1");
  if (clusters.empty()) throw ConfigError("scenario needs at least one cluster");
  if (rms.empty()) throw ConfigError("scenario needs at least one RM");
  if (pairs_per_step < 1) throw ConfigError("pairs_per_step must be at least 1");
  if (n_steps < 1) throw ConfigError("n_steps must be at least 1");
  if (seeds.empty()) throw ConfigError("scenario needs at least one seed");
  std::set<int> ids;
  double total_weight = 0.0;
  for (const auto& c : clusters) {
    if (!ids.insert(c.cluster_id).second) {
      throw ConfigError("duplicate cluster id " + std::to_string(c.cluster_id));
    }
    if (c.center.size() != feature_dim) {
      throw ConfigError("cluster " + std::to_string(c.cluster_id) + " center has length " +
                        std::to_string(c.center.size()) + ", feature_dim is " + std::to_string(feature_dim));
    }
    if (!(c.spread >= 0.0)) throw ConfigError("cluster spread must be non-negative");
    if (!(c.weight >= 0.0)) throw ConfigError("cluster weight must be non-negative");
    total_weight += c.weight;
  }
  if (!(total_weight > 0.0)) throw ConfigError("cluster weights sum to zero");
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    for (std::size_t j = i + 1; j < clusters.size(); ++j) {
      if (clusters[i].center == clusters[j].center) {
        throw ConfigError("cluster centers must be pairwise distinct");
      }
    }
  }
  for (std::size_t n = 0; n < rms.size(); ++n) {
    if (rms[n].rm_id != n) throw ConfigError("RM ids must be 0..N-1 in order");
    for (const auto& c : clusters) {
      const double p = rms[n].accuracy(c.cluster_id);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("RM accuracy must lie in [0, 1]");
      }
    }
  }
  if (drift) {
    if (drift->weights.size() != clusters.size()) {
      throw ConfigError("drift weights must have one entry per cluster");
    }
    double post = 0.0;
    for (double w : drift->weights) {
      if (!(w >= 0.0)) throw ConfigError("drift weights must be non-negative");
      post += w;
    }
    if (!(post > 0.0)) throw ConfigError("drift weights sum to zero");
    if (drift->at_step >= n_steps) throw ConfigError("drift step must fall inside the run");
  }
}

std::vector<double> SimScenario::arm_accuracies(std::size_t k) const {
  std::vector<double> acc;
  acc.reserve(rms.size());
  for (const auto& rm : rms) {
    acc.push_back(rm.accuracy(clusters.at(k).cluster_id));
  }
  return acc;
}

std::vector<std::size_t> SimScenario::best_arms(std::size_t k) const {
  const auto acc = arm_accuracies(k);
  const double top = *std::max_element(acc.begin(), acc.end());
  std::vector<std::size_t> best;
  for (std::size_t n = 0; n < acc.size(); ++n) {
    if (acc[n] == top) {
      best.push_back(n);
    }
  }
  return best;
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

}  // namespace

json to_json(const SimScenario& s) {
  json doc;
  doc["kind"] = "sim_scenario";
  doc["version"] = kScenarioFormatVersion;
  doc["name"] = s.name;
  doc["feature_dim"] = s.feature_dim;
  json clusters = json::array();
  for (const auto& c : s.clusters) {
    clusters.push_back({{"cluster_id", c.cluster_id},
                        {"center", io::vector_to_json(c.center)},
                        {"spread", c.spread},
                        {"weight", c.weight}});
  }
  doc["clusters"] = std::move(clusters);
  json rms = json::array();
  for (const auto& rm : s.rms) {
    json profile = json::object();
    for (const auto& [cid, p] : rm.accuracy_profile) {
      profile[std::to_string(cid)] = p;
    }
    rms.push_back({{"rm_id", rm.rm_id}, {"seed", rm.seed}, {"accuracy_profile", profile}});
  }
  doc["rms"] = std::move(rms);
  doc["pairs_per_step"] = s.pairs_per_step;
  doc["n_steps"] = s.n_steps;
  doc["seeds"] = s.seeds;
  doc["offline_pairs"] = s.offline_pairs;
  if (s.drift) {
    doc["drift"] = {{"at_step", s.drift->at_step}, {"weights", s.drift->weights}};
  }
  return doc;
}

SimScenario scenario_from_json(const json& doc) {
  try {
    io::check_document(doc, "sim_scenario", kScenarioFormatVersion);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  reject_unknown_keys(doc,
                      {"kind", "version", "name", "feature_dim", "clusters", "rms", "pairs_per_step",
                       "n_steps", "seeds", "offline_pairs", "drift"},
                      "scenario");
  SimScenario s;
  try {
    s.name = doc.value("name", std::string("custom"));
    s.feature_dim = io::require(doc, "feature_dim").get<Eigen::Index>();
    for (const auto& c : io::require(doc, "clusters")) {
      reject_unknown_keys(c, {"cluster_id", "center", "spread", "weight"}, "cluster");
      Cluster cl;
      cl.cluster_id = io::require(c, "cluster_id").get<int>();
      cl.center = io::vector_from_json(io::require(c, "center"), "center");
      cl.spread = c.value("spread", 0.5);
      cl.weight = c.value("weight", 1.0);
      s.clusters.push_back(std::move(cl));
    }
    for (const auto& r : io::require(doc, "rms")) {
      reject_unknown_keys(r, {"rm_id", "seed", "accuracy_profile"}, "rm");
      SyntheticRm rm;
      rm.rm_id = io::require(r, "rm_id").get<std::size_t>();
      rm.seed = r.value("seed", std::uint64_t{0});
      for (const auto& [key, p] : io::require(r, "accuracy_profile").items()) {
        rm.accuracy_profile[std::stoi(key)] = p.get<double>();
      }
      s.rms.push_back(std::move(rm));
    }
    s.pairs_per_step = io::require(doc, "pairs_per_step").get<std::size_t>();
    s.n_steps = io::require(doc, "n_steps").get<std::size_t>();
    s.seeds = io::require(doc, "seeds").get<std::vector<std::uint64_t>>();
    s.offline_pairs = doc.value("offline_pairs", std::size_t{0});
    if (doc.contains("drift")) {
      const auto& d = doc["drift"];
      reject_unknown_keys(d, {"at_step", "weights"}, "drift");
      s.drift = Drift{io::require(d, "at_step").get<std::size_t>(),
                      io::require(d, "weights").get<std::vector<double>>()};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("accuracy_profile keys must be integer cluster ids");
  }
  s.validate();
  return s;
}

namespace {

Eigen::VectorXd axis(Eigen::Index dim, Eigen::Index k, double scale) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  v[k] = scale;
  return v;
}

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> seeds(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    seeds[i] = i;
  }
  return seeds;
}

SyntheticRm make_rm(std::size_t id, std::map<int, double> profile) {
  return SyntheticRm{id, std::move(profile), 1000 + id};
}

}  // namespace

std::vector<std::string> preset_names() { return {"two_cluster", "stationary_gap", "cold_start", "drift"}; }

SimScenario preset_scenario(std::string_view name) {
  SimScenario s;
  s.name = std::string(name);
  s.seeds = seed_range(20);
  if (name == "two_cluster") {
    // Two specialists, each strong on one cluster.
    s.feature_dim = 8;
    s.clusters = {Cluster{0, axis(8, 0, 2.0), 0.5, 0.5}, Cluster{1, axis(8, 1, 2.0), 0.5, 0.5}};
    s.rms = {make_rm(0, {{0, 0.95}, {1, 0.55}}), make_rm(1, {{0, 0.55}, {1, 0.95}})};
    s.pairs_per_step = 64;
    s.n_steps = 100;
  } else if (name == "stationary_gap") {
    // One context blob; arm 1 dominates arm 0 by 0.3 in expected correctness.
    s.feature_dim = 4;
    Eigen::VectorXd center(4);
    center << 1.0, 0.5, -0.5, 0.25;
    s.clusters = {Cluster{0, center, 0.3, 1.0}};
    s.rms = {make_rm(0, {{0, 0.6}}), make_rm(1, {{0, 0.9}})};
    s.pairs_per_step = 64;
    s.n_steps = 1000;
    s.offline_pairs = 4096;
  } else if (name == "cold_start" || name == "drift") {
    // Three specialists plus a generalist (RM 3) that is second best on the
    // first three clusters and best on cluster 3. Cluster 3 has no weight
    // before the drift, so an offline corpus never sees it.
    s.feature_dim = 8;
    s.clusters = {Cluster{0, axis(8, 0, 2.0), 0.5, 1.0}, Cluster{1, axis(8, 1, 2.0), 0.5, 1.0},
                  Cluster{2, axis(8, 2, 2.0), 0.5, 1.0}, Cluster{3, axis(8, 3, 2.0), 0.5, 0.0}};
    s.rms = {make_rm(0, {{0, 0.95}, {1, 0.65}, {2, 0.65}, {3, 0.60}}),
             make_rm(1, {{0, 0.65}, {1, 0.95}, {2, 0.65}, {3, 0.60}}),
             make_rm(2, {{0, 0.65}, {1, 0.65}, {2, 0.95}, {3, 0.60}}),
             make_rm(3, {{0, 0.85}, {1, 0.85}, {2, 0.85}, {3, 0.95}})};
    s.pairs_per_step = 16;
    s.n_steps = 200;
    if (name == "cold_start") {
      s.clusters[3].weight = 1.0;
      s.n_steps = 100;
    } else {
      s.drift = Drift{s.n_steps / 2, {1.0, 1.0, 1.0, 3.0}};
    }
  } else {
    std::string names;
    for (const auto& n : preset_names()) {
      names += (names.empty() ? "" : ", ") + n;
    }
    throw ConfigError("unknown scenario preset '" + std::string(name) + "'; valid presets: " + names);
  }
  s.validate();
  return s;
}

Preference SimDataset::answer(std::size_t pair, std::size_t rm) const {
  const Preference truth_label = pairs.at(pair).label.value();
  return correct(pair, rm) ? truth_label : flip(truth_label);
}

namespace {

double unit_uniform(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * (1.0 / 9007199254740992.0);
}

std::size_t draw_cluster(const std::vector<double>& weights, Rng& rng) {
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return pick(rng);
}

}  // namespace

SimDataset generate_scenario(const SimScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  SimDataset ds;
  ds.n_arms = scenario.n_arms();
  Rng rng(derive_seed(seed, 1));

  std::vector<double> pre;
  for (const auto& c : scenario.clusters) {
    pre.push_back(c.weight);
  }

  const std::size_t n_offline = scenario.offline_pair_count();
  const std::size_t n_online = scenario.online_pairs();
  const std::size_t total = n_offline + n_online;
  ds.pairs.reserve(total);
  ds.features.reserve(total);
  ds.cluster_of.reserve(total);
  ds.truth.reserve(total * ds.n_arms);

  auto emit = [&](std::size_t k, bool offline) {
    const std::size_t i = ds.pairs.size();
    const Cluster& c = scenario.clusters[k];
    Eigen::VectorXd x = c.center + c.spread * standard_normal_vector(scenario.feature_dim, rng);
    const bool prefers_a = std::bernoulli_distribution(0.5)(rng);
    PreferencePair p;
    p.pair_id = (offline ? "off-" : "on-") + std::to_string(i);
    p.prompt = "topic " + std::to_string(c.cluster_id) + " question " + std::to_string(i);
    p.response_a = "first answer to question " + std::to_string(i);
    p.response_b = "second answer to question " + std::to_string(i);
    p.label = prefers_a ? Preference::kA : Preference::kB;
    for (std::size_t n = 0; n < ds.n_arms; ++n) {
      const SyntheticRm& rm = scenario.rms[n];
      const double u = unit_uniform(derive_seed(derive_seed(rm.seed, seed), i));
      ds.truth.push_back(u < rm.accuracy(c.cluster_id) ? 1 : 0);
    }
    ds.index_of.emplace(p.pair_id, i);
    ds.pairs.push_back(std::move(p));
    ds.features.push_back(std::move(x));
    ds.cluster_of.push_back(k);
    (offline ? ds.offline : ds.online).push_back(i);
  };

  for (std::size_t i = 0; i < n_offline; ++i) {
    emit(draw_cluster(pre, rng), true);
  }
  for (std::size_t t = 0; t < scenario.n_steps; ++t) {
    const bool drifted = scenario.drift && t >= scenario.drift->at_step;
    const std::vector<double>& weights = drifted ? scenario.drift->weights : pre;
    for (std::size_t b = 0; b < scenario.pairs_per_step; ++b) {
      emit(draw_cluster(weights, rng), false);
    }
  }
  return ds;
}

Preference SyntheticRmPool::do_annotate(const PreferencePair& pair, std::size_t rm) {
  auto it = dataset_.index_of.find(pair.pair_id);
  if (it == dataset_.index_of.end()) {
    throw InputError("pair '" + pair.pair_id + "' is not part of the synthetic dataset");
  }
  if (rm >= dataset_.n_arms) {
    throw InputError("RM index " + std::to_string(rm) + " outside the pool");
  }
  return dataset_.answer(it->second, rm);
}

AnnotationRmPool AnnotationRmPool::load(const std::filesystem::path& path) {
  std::unordered_map<std::string, std::map<std::size_t, Preference>> raw;
  std::size_t n_arms = 0;
  io::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    if (!obj.contains("pair_id") || !obj.contains("rm_index") || !obj.contains("preferred")) {
      throw FormatError(line, "annotation row needs 'pair_id', 'rm_index' and 'preferred'");
    }
    const auto rm = obj["rm_index"].get<std::size_t>();
    const auto pref = obj["preferred"].get<std::string>();
    if (pref != "A" && pref != "B") {
      throw FormatError(line, "'preferred' must be \"A\" or \"B\"");
    }
    if (!raw[obj["pair_id"].get<std::string>()].emplace(rm, pref == "A" ? Preference::kA : Preference::kB).second) {
      throw FormatError(line, "duplicate annotation");
    }
    n_arms = std::max(n_arms, rm + 1);
  });
  std::unordered_map<std::string, std::vector<Preference>> answers;
  for (auto& [id, by_rm] : raw) {
    if (by_rm.size() != n_arms) {
      throw FormatError(0, "pair '" + id + "' is not annotated by all " + std::to_string(n_arms) + " RMs");
    }
    std::vector<Preference> row;
    for (const auto& [rm, pref] : by_rm) {
      row.push_back(pref);
    }
    answers.emplace(id, std::move(row));
  }
  return AnnotationRmPool(n_arms, std::move(answers));
}

Preference AnnotationRmPool::do_annotate(const PreferencePair& pair, std::size_t rm) {
  auto it = answers_.find(pair.pair_id);
  if (it == answers_.end()) {
    throw InputError("no annotations for pair '" + pair.pair_id + "'");
  }
  if (rm >= it->second.size()) {
    throw InputError("RM index " + std::to_string(rm) + " outside the pool");
  }
  return it->second[rm];
}

void save_annotations(const std::filesystem::path& path, const SimDataset& dataset,
                      const std::optional<std::string>& provenance) {
  std::string text = provenance.value_or("");
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    for (std::size_t n = 0; n < dataset.n_arms; ++n) {
      json row;
      row["pair_id"] = dataset.pairs[i].pair_id;
      row["rm_index"] = n;
      row["preferred"] = dataset.answer(i, n) == Preference::kA ? "A" : "B";
      text += row.dump();
      text += '\n';
    }
  }
  io::write_file(path, text);
}

}  // namespace rmrouter::sim
