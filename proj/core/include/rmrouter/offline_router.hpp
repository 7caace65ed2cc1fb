#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "rmrouter/features.hpp"

namespace rmrouter {

// delta_i^(n): whether reward model rm_index agreed with the ground truth on
// pair_id.
struct BehaviorRecord {
  std::string pair_id;
  std::size_t rm_index = 0;
  bool correct = false;
};

// Pair on which winner_rm was correct and loser_rm was not.
struct DisagreementSample {
  std::string pair_id;
  std::size_t winner_rm = 0;
  std::size_t loser_rm = 0;
};

// Source of reward-model annotations. annotate() counts every call so that
// experiments can account for RM cost.
class RmPool {
 public:
  virtual ~RmPool() = default;

  virtual std::size_t size() const = 0;

  Preference annotate(const PreferencePair& pair, std::size_t rm) {
    ++calls_;
    return do_annotate(pair, rm);
  }

  std::uint64_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 protected:
  virtual Preference do_annotate(const PreferencePair& pair, std::size_t rm) = 0;

 private:
  std::uint64_t calls_ = 0;
};

// Queries every RM on every pair; one record per (pair, rm) in pair-major order.
// Throws InputError on an unlabeled pair.
std::vector<BehaviorRecord> collect_behavior(std::span<const PreferencePair> dataset, RmPool& pool);

// For each pair (in first-appearance order) emits every ordered
// (winner, loser) with winner correct and loser incorrect, winners and losers
// in ascending index order.
std::vector<DisagreementSample> extract_disagreements(std::span<const BehaviorRecord> records);

// Trainable router: fusion MLP plus the BT head (bt_embeddings, N x d) and the
// auxiliary CLS head (cls_embeddings, N x d).
struct TrainMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
  // Largest |dL/dE_cls| seen during training; exactly zero when lambda == 0.
  double cls_grad_max_abs = 0.0;
};

struct OfflineRouterModel {
  FusionParams fusion;
  Eigen::MatrixXd bt_embeddings;
  Eigen::MatrixXd cls_embeddings;
  double lambda = 0.2;
  TrainMeta meta;

  std::size_t n_arms() const { return static_cast<std::size_t>(bt_embeddings.rows()); }
  Eigen::Index dim() const { return bt_embeddings.cols(); }

  // Throws DimError when fusion/head shapes disagree.
  void validate() const;

  // h = fusion(input).
  PairEmbedding embed(const Eigen::VectorXd& fusion_input) const;
  // <h, E_bt[n]> for every n.
  Eigen::VectorXd bt_scores(const PairEmbedding& h) const;
};

double bt_loss(const OfflineRouterModel& model, const PairEmbedding& h,
               const DisagreementSample& sample);
double cls_loss(const OfflineRouterModel& model, const PairEmbedding& h,
                const BehaviorRecord& record);

// One pair's training signal: its fusion input, the (winner, loser) arm pairs
// and the per-arm behavior bits.
struct PairExample {
  std::string pair_id;
  Eigen::VectorXd input;
  std::vector<std::pair<std::size_t, std::size_t>> disagreements;
  std::vector<std::pair<std::size_t, bool>> behavior;
};

// Groups behavior records by pair and attaches fusion inputs. Pairs are kept
// in the order of `inputs`. Throws InputError for records of unknown pairs.
std::vector<PairExample> build_examples(
    std::span<const std::pair<std::string, Eigen::VectorXd>> inputs,
    std::span<const BehaviorRecord> records);

struct OfflineGradients {
  Eigen::MatrixXd fusion_weight;
  Eigen::VectorXd fusion_bias;
  Eigen::MatrixXd bt;
  Eigen::MatrixXd cls;

  static OfflineGradients zeros_like(const OfflineRouterModel& model);
};

// Mini-batch objective. bt and cls are means over the disagreement samples and
// behavior records in the batch (zero when the batch holds none); total is
// bt + lambda * cls.
struct BatchLoss {
  double bt = 0.0;
  double cls = 0.0;
  double total = 0.0;
  std::size_t n_bt = 0;
  std::size_t n_cls = 0;
};

// Loss of the batch and, when grad is non-null, its analytic gradient with
// respect to every trainable parameter (overwrites *grad).
BatchLoss batch_loss(const OfflineRouterModel& model, std::span<const PairExample* const> batch,
                     OfflineGradients* grad);

enum class Optimizer { kSgd, kAdamW };

struct TrainConfig {
  double lambda = 0.2;
  double learning_rate = 1e-2;
  int epochs = 2;
  std::size_t batch_size = 8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdamW;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;     // AdamW only
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Eigen::Index embed_dim = 64;
  double init_stddev = 0.02;
  Activation activation = Activation::kTanh;

  void validate() const;
};

// Mini-batch training of fusion, E_bt and E_cls on L_bt + lambda * L_cls with
// decoupled weight decay. Throws TrainError when there is no disagreement
// sample; deterministic given config.seed.
OfflineRouterModel train_offline(std::span<const PairExample> examples, const TrainConfig& config);

// argmax_n <h, E_bt[n]>, lowest index on ties.
std::size_t route_offline(const OfflineRouterModel& model, const PairEmbedding& h);

// E_bt, verbatim.
Eigen::MatrixXd export_prior(const OfflineRouterModel& model);

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kPriorFormatVersion = 1;

nlohmann::json to_json(const OfflineRouterModel& model);
OfflineRouterModel offline_model_from_json(const nlohmann::json& doc);

nlohmann::json prior_to_json(const Eigen::MatrixXd& prior);
Eigen::MatrixXd prior_from_json(const nlohmann::json& doc);

// Behavior files: JSONL {"pair_id", "rm_index", "correct"}.
std::vector<BehaviorRecord> load_behavior(const std::filesystem::path& path);
void save_behavior(const std::filesystem::path& path, std::span<const BehaviorRecord> records,
                   const std::optional<std::string>& provenance = std::nullopt);

}  // namespace rmrouter
