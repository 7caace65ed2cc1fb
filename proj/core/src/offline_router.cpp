#include "rmrouter/offline_router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "rmrouter/errors.hpp"
#include "rmrouter/serialization.hpp"

namespace rmrouter {

std::vector<BehaviorRecord> collect_behavior(std::span<const PreferencePair> dataset,
                                             RmPool& pool) {
  for (const auto& pair : dataset) {
    if (!pair.label) {
      throw InputError("pair '" + pair.pair_id + "' has no ground-truth label");
    }
  }
  std::vector<BehaviorRecord> records;
  records.reserve(dataset.size() * pool.size());
  for (const auto& pair : dataset) {
    for (std::size_t n = 0; n < pool.size(); ++n) {
      const Preference answer = pool.annotate(pair, n);
      records.push_back(BehaviorRecord{pair.pair_id, n, answer == *pair.label});
    }
  }
  return records;
}

std::vector<DisagreementSample> extract_disagreements(std::span<const BehaviorRecord> records) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, bool>>> by_pair;
  for (const auto& r : records) {
    auto [it, inserted] = by_pair.try_emplace(r.pair_id);
    if (inserted) {
      order.push_back(r.pair_id);
    }
    it->second.emplace_back(r.rm_index, r.correct);
  }
  std::vector<DisagreementSample> samples;
  for (const auto& id : order) {
    auto bits = by_pair[id];
    std::sort(bits.begin(), bits.end());
    for (const auto& [winner, winner_ok] : bits) {
      if (!winner_ok) {
        continue;
      }
      for (const auto& [loser, loser_ok] : bits) {
        if (!loser_ok) {
          samples.push_back(DisagreementSample{id, winner, loser});
        }
      }
    }
  }
  return samples;
}

void OfflineRouterModel::validate() const {
  const Eigen::Index d = bt_embeddings.cols();
  if (cls_embeddings.rows() != bt_embeddings.rows() || cls_embeddings.cols() != d) {
    throw DimError("BT and CLS embedding matrices differ in shape");
  }
  if (fusion.output_dim() != d || fusion.bias.size() != d) {
    throw DimError("fusion output dimension does not match embedding dimension");
  }
  if (bt_embeddings.rows() < 1) {
    throw DimError("model has no arms");
  }
  if (!(lambda >= 0.0)) {
    throw ConfigError("lambda must be non-negative");
  }
}

PairEmbedding OfflineRouterModel::embed(const Eigen::VectorXd& fusion_input) const {
  return PairEmbedding{fusion.apply(fusion_input)};
}

Eigen::VectorXd OfflineRouterModel::bt_scores(const PairEmbedding& h) const {
  if (h.dim() != dim()) {
    throw DimError("embedding has d=" + std::to_string(h.dim()) + ", model has d=" +
                   std::to_string(dim()));
  }
  return bt_embeddings * h.vector;
}

namespace {

void check_arm(const OfflineRouterModel& model, std::size_t arm) {
  if (arm >= model.n_arms()) {
    throw InputError("arm index " + std::to_string(arm) + " out of range for " +
                     std::to_string(model.n_arms()) + " arms");
  }
}

}  // namespace

double bt_loss(const OfflineRouterModel& model, const PairEmbedding& h,
               const DisagreementSample& sample) {
  check_arm(model, sample.winner_rm);
  check_arm(model, sample.loser_rm);
  const Eigen::VectorXd scores = model.bt_scores(h);
  const auto w = static_cast<Eigen::Index>(sample.winner_rm);
  const auto l = static_cast<Eigen::Index>(sample.loser_rm);
  return neg_log_sigmoid(scores[w] - scores[l]);
}

double cls_loss(const OfflineRouterModel& model, const PairEmbedding& h,
                const BehaviorRecord& record) {
  check_arm(model, record.rm_index);
  if (h.dim() != model.dim()) {
    throw DimError("embedding dimension does not match model");
  }
  const double z = h.vector.dot(model.cls_embeddings.row(static_cast<Eigen::Index>(record.rm_index)));
  return record.correct ? neg_log_sigmoid(z) : neg_log_sigmoid(-z);
}

std::vector<PairExample> build_examples(
    std::span<const std::pair<std::string, Eigen::VectorXd>> inputs,
    std::span<const BehaviorRecord> records) {
  std::vector<PairExample> examples;
  examples.reserve(inputs.size());
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& [id, input] : inputs) {
    if (!index.emplace(id, examples.size()).second) {
      throw InputError("duplicate pair_id '" + id + "'");
    }
    examples.push_back(PairExample{id, input, {}, {}});
  }
  for (const auto& r : records) {
    auto it = index.find(r.pair_id);
    if (it == index.end()) {
      throw InputError("behavior record for unknown pair '" + r.pair_id + "'");
    }
    examples[it->second].behavior.emplace_back(r.rm_index, r.correct);
  }
  for (auto& ex : examples) {
    std::sort(ex.behavior.begin(), ex.behavior.end());
    for (const auto& [winner, winner_ok] : ex.behavior) {
      if (!winner_ok) {
        continue;
      }
      for (const auto& [loser, loser_ok] : ex.behavior) {
        if (!loser_ok) {
          ex.disagreements.emplace_back(winner, loser);
        }
      }
    }
  }
  return examples;
}

OfflineGradients OfflineGradients::zeros_like(const OfflineRouterModel& model) {
  OfflineGradients g;
  g.fusion_weight = Eigen::MatrixXd::Zero(model.fusion.weight.rows(), model.fusion.weight.cols());
  g.fusion_bias = Eigen::VectorXd::Zero(model.fusion.bias.size());
  g.bt = Eigen::MatrixXd::Zero(model.bt_embeddings.rows(), model.bt_embeddings.cols());
  g.cls = Eigen::MatrixXd::Zero(model.cls_embeddings.rows(), model.cls_embeddings.cols());
  return g;
}

BatchLoss batch_loss(const OfflineRouterModel& model, std::span<const PairExample* const> batch,
                     OfflineGradients* grad) {
  BatchLoss out;
  for (const PairExample* ex : batch) {
    out.n_bt += ex->disagreements.size();
    out.n_cls += ex->behavior.size();
  }
  if (grad != nullptr) {
    *grad = OfflineGradients::zeros_like(model);
  }
  const double bt_scale = out.n_bt > 0 ? 1.0 / static_cast<double>(out.n_bt) : 0.0;
  const double cls_scale = out.n_cls > 0 ? model.lambda / static_cast<double>(out.n_cls) : 0.0;
  const Eigen::Index n_arms = model.bt_embeddings.rows();

  double bt_sum = 0.0;
  double cls_sum = 0.0;
  for (const PairExample* ex : batch) {
    const Eigen::VectorXd h = model.fusion.apply(ex->input);
    Eigen::VectorXd dh = Eigen::VectorXd::Zero(h.size());

    for (const auto& [winner, loser] : ex->disagreements) {
      const auto w = static_cast<Eigen::Index>(winner);
      const auto l = static_cast<Eigen::Index>(loser);
      if (w >= n_arms || l >= n_arms) {
        throw InputError("disagreement references an arm outside the model");
      }
      const double gap = h.dot(model.bt_embeddings.row(w) - model.bt_embeddings.row(l));
      bt_sum += neg_log_sigmoid(gap);
      if (grad != nullptr) {
        // d/dgap of -log sigmoid(gap) is -sigmoid(-gap).
        const double g = -sigmoid(-gap) * bt_scale;
        grad->bt.row(w) += g * h.transpose();
        grad->bt.row(l) -= g * h.transpose();
        dh += g * (model.bt_embeddings.row(w) - model.bt_embeddings.row(l)).transpose();
      }
    }

    for (const auto& [arm, correct] : ex->behavior) {
      const auto n = static_cast<Eigen::Index>(arm);
      if (n >= n_arms) {
        throw InputError("behavior record references an arm outside the model");
      }
      const double z = h.dot(model.cls_embeddings.row(n));
      cls_sum += correct ? neg_log_sigmoid(z) : neg_log_sigmoid(-z);
      if (grad != nullptr) {
        const double g = cls_scale * (sigmoid(z) - (correct ? 1.0 : 0.0));
        grad->cls.row(n) += g * h.transpose();
        dh += g * model.cls_embeddings.row(n).transpose();
      }
    }

    if (grad != nullptr) {
      Eigen::VectorXd da = dh;
      if (model.fusion.activation == Activation::kTanh) {
        da = dh.array() * (1.0 - h.array().square());
      }
      grad->fusion_weight.noalias() += da * ex->input.transpose();
      grad->fusion_bias += da;
    }
  }
  out.bt = out.n_bt > 0 ? bt_sum / static_cast<double>(out.n_bt) : 0.0;
  out.cls = out.n_cls > 0 ? cls_sum / static_cast<double>(out.n_cls) : 0.0;
  out.total = out.bt + model.lambda * out.cls;
  return out;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (embed_dim < 1) throw ConfigError("embedding dimension must be at least 1");
  if (!(init_stddev > 0.0)) throw ConfigError("init stddev must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

namespace {

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = normal(rng);
    }
  }
  return m;
}

// Optimizer state for one parameter tensor.
struct Slot {
  Eigen::ArrayXXd first;
  Eigen::ArrayXXd second;
};

class ParameterUpdater {
 public:
  explicit ParameterUpdater(const TrainConfig& config) : config_(config) {}

  template <typename Param, typename Grad>
  void step(Param& param, const Grad& grad, Slot& slot, bool decay) {
    auto p = param.array();
    const auto g = grad.array();
    if (slot.first.size() == 0) {
      slot.first = Eigen::ArrayXXd::Zero(param.rows(), param.cols());
      slot.second = Eigen::ArrayXXd::Zero(param.rows(), param.cols());
    }
    const double lr = config_.learning_rate;
    if (decay && config_.weight_decay > 0.0) {
      p -= lr * config_.weight_decay * p;
    }
    if (config_.optimizer == Optimizer::kSgd) {
      slot.first = config_.momentum * slot.first + g;
      p -= lr * slot.first;
      return;
    }
    slot.first = config_.beta1 * slot.first + (1.0 - config_.beta1) * g;
    slot.second = config_.beta2 * slot.second + (1.0 - config_.beta2) * g.square();
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    p -= lr * (slot.first / c1) / ((slot.second / c2).sqrt() + config_.epsilon);
  }

  void next() { ++t_; }

 private:
  const TrainConfig& config_;
  std::uint64_t t_ = 0;
};

}  // namespace

OfflineRouterModel train_offline(std::span<const PairExample> examples, const TrainConfig& config) {
  config.validate();
  if (examples.empty()) {
    throw TrainError("training set is empty");
  }
  const Eigen::Index input_dim = examples.front().input.size();
  std::size_t n_bt = 0;
  std::size_t max_arm = 0;
  bool any_behavior = false;
  for (const auto& ex : examples) {
    if (ex.input.size() != input_dim) {
      throw DimError("pair '" + ex.pair_id + "' has fusion input length " +
                     std::to_string(ex.input.size()) + ", expected " + std::to_string(input_dim));
    }
    n_bt += ex.disagreements.size();
    for (const auto& [arm, ok] : ex.behavior) {
      max_arm = std::max(max_arm, arm);
      any_behavior = true;
    }
  }
  if (n_bt == 0 || !any_behavior) {
    throw TrainError("disagreement set is empty; the BT head has no training signal");
  }
  const auto n_arms = static_cast<Eigen::Index>(max_arm + 1);

  Rng rng(config.seed);
  OfflineRouterModel model;
  model.lambda = config.lambda;
  model.fusion = FusionParams::random(config.embed_dim, input_dim, config.init_stddev, rng);
  model.fusion.activation = config.activation;
  model.bt_embeddings = normal_matrix(n_arms, config.embed_dim, config.init_stddev, rng);
  model.cls_embeddings = normal_matrix(n_arms, config.embed_dim, config.init_stddev, rng);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const PairExample*> batch;
  batch.reserve(config.batch_size);
  OfflineGradients grad;
  Slot w_slot, b_slot, bt_slot, cls_slot;
  ParameterUpdater updater(config);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&examples[order[i]]);
      }
      const BatchLoss loss = batch_loss(model, batch, &grad);
      epoch_total += loss.total;
      ++n_batches;
      model.meta.cls_grad_max_abs =
          std::max(model.meta.cls_grad_max_abs, grad.cls.cwiseAbs().maxCoeff());
      updater.next();
      updater.step(model.fusion.weight, grad.fusion_weight, w_slot, true);
      updater.step(model.fusion.bias, grad.fusion_bias, b_slot, false);
      updater.step(model.bt_embeddings, grad.bt, bt_slot, true);
      updater.step(model.cls_embeddings, grad.cls, cls_slot, true);
    }
    model.meta.epoch_losses.push_back(epoch_total / static_cast<double>(n_batches));
  }

  std::vector<const PairExample*> all;
  all.reserve(examples.size());
  for (const auto& ex : examples) {
    all.push_back(&ex);
  }
  model.meta.seed = config.seed;
  model.meta.epochs = config.epochs;
  model.meta.final_loss = batch_loss(model, all, nullptr).total;
  return model;
}

std::size_t route_offline(const OfflineRouterModel& model, const PairEmbedding& h) {
  return argmax_lowest(model.bt_scores(h));
}

Eigen::MatrixXd export_prior(const OfflineRouterModel& model) { return model.bt_embeddings; }

namespace {

std::string activation_name(Activation a) { return a == Activation::kTanh ? "tanh" : "linear"; }

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "linear") return Activation::kLinear;
  throw FormatError(0, "unknown activation '" + name + "'");
}

}  // namespace

nlohmann::json to_json(const OfflineRouterModel& model) {
  nlohmann::json doc;
  doc["kind"] = "offline_router_model";
  doc["version"] = kModelFormatVersion;
  doc["d"] = model.dim();
  doc["n_arms"] = model.n_arms();
  doc["input_dim"] = model.fusion.input_dim();
  doc["lambda"] = model.lambda;
  doc["fusion"] = {{"weight", io::matrix_to_rows(model.fusion.weight)},
                   {"bias", io::vector_to_json(model.fusion.bias)},
                   {"activation", activation_name(model.fusion.activation)}};
  doc["bt_embeddings"] = io::matrix_to_rows(model.bt_embeddings);
  doc["cls_embeddings"] = io::matrix_to_rows(model.cls_embeddings);
  nlohmann::json losses = nlohmann::json::array();
  for (double v : model.meta.epoch_losses) {
    losses.push_back(v);
  }
  doc["train_meta"] = {{"seed", model.meta.seed},
                       {"epochs", model.meta.epochs},
                       {"final_loss", model.meta.final_loss},
                       {"epoch_losses", losses},
                       {"cls_grad_max_abs", model.meta.cls_grad_max_abs}};
  return doc;
}

OfflineRouterModel offline_model_from_json(const nlohmann::json& doc) {
  io::check_document(doc, "offline_router_model", kModelFormatVersion);
  OfflineRouterModel model;
  const auto d = io::require(doc, "d").get<Eigen::Index>();
  const auto n_arms = io::require(doc, "n_arms").get<Eigen::Index>();
  const auto input_dim = io::require(doc, "input_dim").get<Eigen::Index>();
  model.lambda = io::require(doc, "lambda").get<double>();
  const auto& fusion = io::require(doc, "fusion");
  model.fusion.weight = io::matrix_from_rows(io::require(fusion, "weight"), "fusion.weight");
  model.fusion.bias = io::vector_from_json(io::require(fusion, "bias"), "fusion.bias");
  model.fusion.activation = activation_from_name(io::require(fusion, "activation").get<std::string>());
  model.bt_embeddings = io::matrix_from_rows(io::require(doc, "bt_embeddings"), "bt_embeddings");
  model.cls_embeddings = io::matrix_from_rows(io::require(doc, "cls_embeddings"), "cls_embeddings");
  if (model.bt_embeddings.rows() != n_arms || model.bt_embeddings.cols() != d ||
      model.fusion.weight.rows() != d || model.fusion.weight.cols() != input_dim) {
    throw FormatError(0, "model matrices do not match the declared d/n_arms/input_dim");
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw FormatError(0, e.what());
  }
  const auto& meta = io::require(doc, "train_meta");
  model.meta.seed = io::require(meta, "seed").get<std::uint64_t>();
  model.meta.epochs = io::require(meta, "epochs").get<int>();
  model.meta.final_loss = io::require(meta, "final_loss").get<double>();
  if (meta.contains("epoch_losses")) {
    for (const auto& v : meta["epoch_losses"]) {
      model.meta.epoch_losses.push_back(v.get<double>());
    }
  }
  model.meta.cls_grad_max_abs = meta.value("cls_grad_max_abs", 0.0);
  return model;
}

nlohmann::json prior_to_json(const Eigen::MatrixXd& prior) {
  nlohmann::json doc;
  doc["kind"] = "rm_prior";
  doc["version"] = kPriorFormatVersion;
  doc["n_arms"] = prior.rows();
  doc["d"] = prior.cols();
  doc["bt_embeddings"] = io::matrix_to_rows(prior);
  return doc;
}

Eigen::MatrixXd prior_from_json(const nlohmann::json& doc) {
  // A full model document also carries the prior.
  if (doc.is_object() && doc.value("kind", std::string{}) == "offline_router_model") {
    return export_prior(offline_model_from_json(doc));
  }
  io::check_document(doc, "rm_prior", kPriorFormatVersion);
  Eigen::MatrixXd prior = io::matrix_from_rows(io::require(doc, "bt_embeddings"), "bt_embeddings");
  if (prior.rows() != io::require(doc, "n_arms").get<Eigen::Index>() ||
      prior.cols() != io::require(doc, "d").get<Eigen::Index>()) {
    throw FormatError(0, "prior matrix does not match the declared n_arms/d");
  }
  return prior;
}

std::vector<BehaviorRecord> load_behavior(const std::filesystem::path& path) {
  std::vector<BehaviorRecord> records;
  io::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t line) {
    if (!obj.contains("pair_id") || !obj.contains("rm_index") || !obj.contains("correct")) {
      throw FormatError(line, "behavior row needs 'pair_id', 'rm_index' and 'correct'");
    }
    const auto& correct = obj["correct"];
    bool bit = false;
    if (correct.is_boolean()) {
      bit = correct.get<bool>();
    } else if (correct.is_number_integer() && (correct.get<int>() == 0 || correct.get<int>() == 1)) {
      bit = correct.get<int>() == 1;
    } else {
      throw FormatError(line, "'correct' must be 0/1 or a boolean");
    }
    const auto& rm = obj["rm_index"];
    if (!rm.is_number_unsigned()) {
      throw FormatError(line, "'rm_index' must be a non-negative integer");
    }
    records.push_back(BehaviorRecord{obj["pair_id"].get<std::string>(), rm.get<std::size_t>(), bit});
  });
  return records;
}

void save_behavior(const std::filesystem::path& path, std::span<const BehaviorRecord> records,
                   const std::optional<std::string>& provenance) {
  std::string text = provenance.value_or("");
  for (const auto& r : records) {
    nlohmann::json row;
    row["pair_id"] = r.pair_id;
    row["rm_index"] = r.rm_index;
    row["correct"] = r.correct ? 1 : 0;
    text += row.dump();
    text += '\n';
  }
  io::write_file(path, text);
}

}  // namespace rmrouter
