#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "rmrouter/features.hpp"
#include "rmrouter/offline_router.hpp"

namespace rmrouter::sim {

// Gaussian blob of pre-fusion feature vectors. weight is the mixture weight
// before any drift.
struct Cluster {
  int cluster_id = 0;
  Eigen::VectorXd center;
  double spread = 0.5;
  double weight = 1.0;
};

// Synthetic reward model: on a pair from cluster c it is correct with
// probability accuracy_profile[c]. Answers are a deterministic function of
// (seed, run seed, pair index).
struct SyntheticRm {
  std::size_t rm_id = 0;
  std::map<int, double> accuracy_profile;
  std::uint64_t seed = 0;

  double accuracy(int cluster_id) const;
};

// Mixture weights (one per cluster, same order) in force from at_step on.
struct Drift {
  std::size_t at_step = 0;
  std::vector<double> weights;
};

struct SimScenario {
  std::string name = "custom";
  Eigen::Index feature_dim = 8;
  std::vector<Cluster> clusters;
  std::vector<SyntheticRm> rms;
  std::size_t pairs_per_step = 64;
  std::size_t n_steps = 100;
  std::vector<std::uint64_t> seeds = {0};
  // Size of the offline corpus drawn from the pre-drift mixture; 0 means as
  // many pairs as the online stream (a 50/50 split).
  std::size_t offline_pairs = 0;
  std::optional<Drift> drift;

  std::size_t n_arms() const { return rms.size(); }
  std::size_t online_pairs() const { return pairs_per_step * n_steps; }
  std::size_t offline_pair_count() const { return offline_pairs == 0 ? online_pairs() : offline_pairs; }

  // Throws ConfigError on any inconsistency.
  void validate() const;

  // Accuracy of every arm on cluster index k (position in `clusters`).
  std::vector<double> arm_accuracies(std::size_t k) const;
  // Arms attaining the maximum accuracy on cluster index k.
  std::vector<std::size_t> best_arms(std::size_t k) const;
};

inline constexpr int kScenarioFormatVersion = 1;

nlohmann::json to_json(const SimScenario& scenario);
// Rejects unknown keys.
SimScenario scenario_from_json(const nlohmann::json& doc);

// Built-in scenarios: "two_cluster", "stationary_gap", "cold_start", "drift".
SimScenario preset_scenario(std::string_view name);
std::vector<std::string> preset_names();

// One generated replay corpus. Pair i has features[i], cluster index
// cluster_of[i] and the frozen RM truth table correct(i, n).
struct SimDataset {
  std::vector<PreferencePair> pairs;
  std::vector<Eigen::VectorXd> features;
  std::vector<std::size_t> cluster_of;
  std::vector<std::uint8_t> truth;  // pairs.size() x n_arms, row-major
  std::size_t n_arms = 0;
  std::vector<std::size_t> offline;  // offline corpus
  std::vector<std::size_t> online;   // stream order; step t is [t*B, (t+1)*B)
  std::unordered_map<std::string, std::size_t> index_of;

  bool correct(std::size_t pair, std::size_t rm) const { return truth[pair * n_arms + rm] != 0; }
  Preference answer(std::size_t pair, std::size_t rm) const;
};

SimDataset generate_scenario(const SimScenario& scenario, std::uint64_t seed);

// RM pool backed by a dataset's truth table.
class SyntheticRmPool : public RmPool {
 public:
  explicit SyntheticRmPool(const SimDataset& dataset) : dataset_(dataset) {}
  std::size_t size() const override { return dataset_.n_arms; }

 protected:
  Preference do_annotate(const PreferencePair& pair, std::size_t rm) override;

 private:
  const SimDataset& dataset_;
};

// Annotations file (JSONL {"pair_id", "rm_index", "preferred": "A"|"B"}) as
// produced by running real RMs offline.
class AnnotationRmPool : public RmPool {
 public:
  AnnotationRmPool(std::size_t n_arms, std::unordered_map<std::string, std::vector<Preference>> answers)
      : n_arms_(n_arms), answers_(std::move(answers)) {}
  static AnnotationRmPool load(const std::filesystem::path& path);

  std::size_t size() const override { return n_arms_; }

 protected:
  Preference do_annotate(const PreferencePair& pair, std::size_t rm) override;

 private:
  std::size_t n_arms_;
  std::unordered_map<std::string, std::vector<Preference>> answers_;
};

void save_annotations(const std::filesystem::path& path, const SimDataset& dataset,
                      const std::optional<std::string>& provenance = std::nullopt);

}  // namespace rmrouter::sim
