// rmrouter: command-line front end for the offline router, the online
// Thompson router and the simulation harness.
//
// Exit codes: 0 success, 1 invariant failure, 2 usage or configuration error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rmrouter/errors.hpp"
#include "rmrouter/features.hpp"
#include "rmrouter/gaussian.hpp"
#include "rmrouter/offline_router.hpp"
#include "rmrouter/online_router.hpp"
#include "rmrouter/serialization.hpp"
#include "rmrouter/sim_harness.hpp"
#include "rmrouter/sim_scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rmrouter;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvariant = 1;
constexpr int kExitUsage = 2;
constexpr const char* kToolVersion = "0.1.0";

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rmrouter");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("RMROUTER_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

json provenance(const std::string& command, json options) {
  return {{"tool", "rmrouter"}, {"tool_version", kToolVersion}, {"command", command}, {"options", std::move(options)}};
}

std::string provenance_comment(const json& config) { return config.dump(); }

void write_document(const fs::path& path, json doc, const json& config) {
  doc["provenance"] = config;
  io::write_file(path, io::dump_document(doc));
  spdlog::debug("wrote {}", path.string());
}

json read_document(const fs::path& path) { return io::parse_document(io::read_file(path)); }

std::string safe_name(std::string name) {
  for (char& c : name) {
    if (c == ':' || c == '/') c = '_';
  }
  return name;
}

// make-scenario ----------------------------------------------------------

struct ScenarioSource {
  std::string preset;
  std::string file;

  sim::SimScenario load() const {
    if (!file.empty()) {
      return sim::scenario_from_json(read_document(file));
    }
    return sim::preset_scenario(preset.empty() ? "two_cluster" : preset);
  }

  json describe() const { return file.empty() ? json{{"preset", preset.empty() ? "two_cluster" : preset}} : json{{"scenario_file", file}}; }
};

void add_scenario_options(CLI::App* cmd, ScenarioSource& src) {
  auto* preset = cmd->add_option("--preset", src.preset, "Built-in scenario")
                     ->check(CLI::IsMember(sim::preset_names()));
  auto* file = cmd->add_option("--scenario", src.file, "Scenario JSON document")->check(CLI::ExistingFile);
  preset->excludes(file);
}

struct MakeScenarioOptions {
  ScenarioSource source;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int cmd_make_scenario(const MakeScenarioOptions& o) {
  const sim::SimScenario scenario = o.source.load();
  const sim::SimDataset ds = sim::generate_scenario(scenario, o.seed);
  json opts = o.source.describe();
  opts["seed"] = o.seed;
  const json config = provenance("make-scenario", opts);
  const std::string header = io::provenance_line(config);
  const fs::path dir(o.out_dir);

  write_document(dir / "scenario.json", sim::to_json(scenario), config);
  save_dataset(dir / "dataset.jsonl", ds.pairs, header);
  EmbeddingMap features;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    features.emplace(ds.pairs[i].pair_id, PairEmbedding{ds.features[i]});
  }
  save_embeddings(dir / "embeddings.jsonl", features, header);
  sim::save_annotations(dir / "annotations.jsonl", ds, header);
  std::cout << "scenario '" << scenario.name << "': " << ds.pairs.size() << " pairs (" << ds.offline.size()
            << " offline, " << ds.online.size() << " online), " << ds.n_arms << " RMs\n";
  return kExitOk;
}

// collect-behavior ---------------------------------------------------------

struct CollectOptions {
  std::string dataset;
  std::string annotations;
  std::string out;
};

int cmd_collect_behavior(const CollectOptions& o) {
  const auto pairs = load_dataset(o.dataset);
  auto pool = sim::AnnotationRmPool::load(o.annotations);
  const auto records = collect_behavior(pairs, pool);
  const json config = provenance("collect-behavior", {{"dataset", o.dataset}, {"annotations", o.annotations}});
  save_behavior(o.out, records, io::provenance_line(config));

  std::vector<std::size_t> hits(pool.size(), 0);
  for (const auto& r : records) hits[r.rm_index] += r.correct ? 1 : 0;
  std::cout << records.size() << " behavior records over " << pairs.size() << " pairs, " << pool.calls()
            << " RM calls\n";
  for (std::size_t n = 0; n < hits.size(); ++n) {
    std::printf("  RM %zu accuracy %.4f\n", n,
                pairs.empty() ? 0.0 : static_cast<double>(hits[n]) / static_cast<double>(pairs.size()));
  }
  return kExitOk;
}

// train-offline ----------------------------------------------------------

struct TrainOptions {
  std::string dataset;
  std::string behavior;
  std::string embeddings;
  std::string out;
  std::string loss_csv;
  double lambda = 0.2;
  double lr = 1e-2;
  int epochs = 2;
  std::size_t batch_size = 8;
  double weight_decay = 0.01;
  long embed_dim = 64;
  long encoder_dim = HashingEncoder::kDefaultDim;
  std::string optimizer = "adamw";
  double momentum = 0.9;
  std::string activation = "tanh";
  std::uint64_t seed = 0;
  double holdout = 0.2;
};

int cmd_train_offline(const TrainOptions& o) {
  const auto pairs = load_dataset(o.dataset);
  const auto records = load_behavior(o.behavior);

  std::vector<std::pair<std::string, Eigen::VectorXd>> inputs;
  inputs.reserve(pairs.size());
  if (!o.embeddings.empty()) {
    const EmbeddingMap vectors = load_embeddings(o.embeddings);
    for (const auto& p : pairs) {
      auto it = vectors.find(p.pair_id);
      if (it == vectors.end()) throw InputError("no embedding for pair '" + p.pair_id + "'");
      inputs.emplace_back(p.pair_id, it->second.vector);
    }
  } else {
    const HashingEncoder encoder(o.encoder_dim);
    for (const auto& p : pairs) inputs.emplace_back(p.pair_id, pair_fusion_input(p, encoder));
  }
  auto examples = build_examples(inputs, records);

  // Deterministic held-out split.
  Rng split_rng(derive_seed(o.seed, 99));
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_held = static_cast<std::size_t>(o.holdout * static_cast<double>(examples.size()));
  std::vector<PairExample> train;
  std::vector<PairExample> held;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_held ? held : train).push_back(std::move(examples[order[k]]));
  }

  TrainConfig tc;
  tc.lambda = o.lambda;
  tc.learning_rate = o.lr;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.weight_decay = o.weight_decay;
  tc.embed_dim = o.embed_dim;
  tc.optimizer = o.optimizer == "sgd" ? Optimizer::kSgd : Optimizer::kAdamW;
  tc.momentum = o.momentum;
  tc.activation = o.activation == "linear" ? Activation::kLinear : Activation::kTanh;
  tc.seed = o.seed;
  spdlog::info("training on {} pairs, holding out {}", train.size(), held.size());
  const OfflineRouterModel model = train_offline(train, tc);

  json opts = {{"dataset", o.dataset},           {"behavior", o.behavior},   {"embeddings", o.embeddings},
               {"lambda", o.lambda},             {"learning_rate", o.lr},    {"epochs", o.epochs},
               {"batch_size", o.batch_size},     {"weight_decay", o.weight_decay},
               {"embed_dim", o.embed_dim},       {"encoder_dim", o.encoder_dim},
               {"optimizer", o.optimizer},       {"momentum", o.momentum},   {"activation", o.activation},
               {"seed", o.seed},                 {"holdout", o.holdout}};
  const json config = provenance("train-offline", opts);
  write_document(o.out, to_json(model), config);
  if (!o.loss_csv.empty()) {
    std::string csv = "# provenance: " + provenance_comment(config) + "\nepoch,loss\n";
    for (std::size_t e = 0; e < model.meta.epoch_losses.size(); ++e) {
      csv += std::to_string(e + 1) + "," + json(model.meta.epoch_losses[e]).dump() + "\n";
    }
    io::write_file(o.loss_csv, csv);
  }

  std::size_t scored = 0;
  std::size_t hits = 0;
  for (const auto& ex : held) {
    bool any = false;
    for (const auto& [arm, ok] : ex.behavior) any = any || ok;
    if (!any) continue;
    const std::size_t arm = route_offline(model, model.embed(ex.input));
    for (const auto& [a, ok] : ex.behavior) {
      if (a == arm && ok) ++hits;
    }
    ++scored;
  }
  std::printf("final loss %.6f\n", model.meta.final_loss);
  if (scored > 0) {
    std::printf("held-out routing accuracy %.4f (%zu pairs)\n", static_cast<double>(hits) / static_cast<double>(scored),
                scored);
  } else {
    std::printf("held-out routing accuracy n/a (no held-out pair with a correct RM)\n");
  }
  return kExitOk;
}

// export-prior -----------------------------------------------------------

struct ExportOptions {
  std::string model;
  std::string out;
};

int cmd_export_prior(const ExportOptions& o) {
  const OfflineRouterModel model = offline_model_from_json(read_document(o.model));
  const json config = provenance("export-prior", {{"model", o.model}});
  write_document(o.out, prior_to_json(export_prior(model)), config);
  std::cout << "prior " << model.n_arms() << "x" << model.dim() << " written to " << o.out << "\n";
  return kExitOk;
}

// init-router --------------------------------------------------------------

struct InitOptions {
  std::size_t arms = 0;
  long dim = 0;
  std::string prior = "zero";
  std::string prior_file;
  double sigma_sq = 1.0;
  std::optional<double> prior_variance;
  std::string sampling = "per_pair";
  std::string out;
};

int cmd_init_router(const InitOptions& o) {
  const bool injected = o.prior == "injected";
  std::optional<Eigen::MatrixXd> prior;
  std::size_t arms = o.arms;
  Eigen::Index dim = o.dim;
  if (injected) {
    if (o.prior_file.empty()) throw ConfigError("--prior injected requires --prior-file");
    prior = prior_from_json(read_document(o.prior_file));
    if (arms == 0) arms = static_cast<std::size_t>(prior->rows());
    if (dim == 0) dim = prior->cols();
  }
  if (arms == 0 || dim == 0) throw ConfigError("--arms and --dim are required without a prior file");
  const double variance = o.prior_variance.value_or(injected ? 0.02 : 1.0);
  const OnlineRouterState state =
      init_router(arms, dim, injected ? PriorMode::kInjected : PriorMode::kZero, prior, o.sigma_sq, variance,
                  o.sampling == "per_batch" ? SamplingMode::kPerBatch : SamplingMode::kPerPair);
  const json config = provenance("init-router", {{"arms", arms},
                                                 {"dim", dim},
                                                 {"prior", o.prior},
                                                 {"prior_file", o.prior_file},
                                                 {"sigma_sq", o.sigma_sq},
                                                 {"prior_variance", variance},
                                                 {"sampling", o.sampling}});
  write_document(o.out, to_json(state), config);
  std::cout << "router state with " << arms << " arms, d=" << dim << " written to " << o.out << "\n";
  return kExitOk;
}

// inspect ----------------------------------------------------------------

void print_posterior(std::size_t n, const ArmPosterior& arm, std::optional<std::uint64_t> selected) {
  std::printf("  arm %zu: |mean| %.6g  trace(cov) %.6g  updates %llu", n, arm.mean().norm(), arm.covariance().trace(),
              static_cast<unsigned long long>(arm.update_count()));
  if (selected) std::printf("  selected %llu", static_cast<unsigned long long>(*selected));
  std::printf("\n");
}

int cmd_inspect(const std::string& path) {
  const json doc = read_document(path);
  const std::string kind = doc.contains("kind") && doc["kind"].is_string() ? doc["kind"].get<std::string>() : "";
  if (kind == "online_router_state") {
    const OnlineRouterState s = online_state_from_json(doc);
    std::printf("online router state: %zu arms, d=%lld, step %llu\n", s.n_arms(), static_cast<long long>(s.dim()),
                static_cast<unsigned long long>(s.step));
    std::printf("  prior %s, prior variance %g, sigma_sq %g\n",
                s.config.prior_mode == PriorMode::kInjected ? "injected" : "zero", s.config.prior_variance,
                s.config.sigma_sq);
    for (std::size_t n = 0; n < s.n_arms(); ++n) print_posterior(n, s.arms[n], s.selection_counts[n]);
  } else if (kind == "offline_router_model") {
    const OfflineRouterModel m = offline_model_from_json(doc);
    std::printf("offline router model: %zu arms, d=%lld, input %lld, lambda %g\n", m.n_arms(),
                static_cast<long long>(m.dim()), static_cast<long long>(m.fusion.input_dim()), m.lambda);
    std::printf("  trained %d epochs, seed %llu, final loss %.6f\n", m.meta.epochs,
                static_cast<unsigned long long>(m.meta.seed), m.meta.final_loss);
    for (std::size_t n = 0; n < m.n_arms(); ++n) {
      std::printf("  arm %zu: |E_bt| %.6g  |E_cls| %.6g\n", n, m.bt_embeddings.row(static_cast<Eigen::Index>(n)).norm(),
                  m.cls_embeddings.row(static_cast<Eigen::Index>(n)).norm());
    }
  } else if (kind == "arm_posterior") {
    const ArmPosterior p = arm_posterior_from_json(doc);
    std::printf("arm posterior: d=%lld, noise variance %g\n", static_cast<long long>(p.dim()), p.noise_variance());
    print_posterior(0, p, std::nullopt);
  } else if (kind == "rm_prior") {
    const Eigen::MatrixXd prior = prior_from_json(doc);
    std::printf("RM prior: %lld arms, d=%lld\n", static_cast<long long>(prior.rows()),
                static_cast<long long>(prior.cols()));
    for (Eigen::Index n = 0; n < prior.rows(); ++n) {
      std::printf("  arm %lld: |mean| %.6g\n", static_cast<long long>(n), prior.row(n).norm());
    }
  } else {
    throw FormatError(0, "'" + path + "' is not a router state, model, posterior or prior document");
  }
  return kExitOk;
}

// run-sim ----------------------------------------------------------------

struct SimOptions {
  ScenarioSource source;
  std::vector<std::string> routers = {"thompson"};
  std::string prior = "zero";
  std::string prior_file;
  std::string reward = "batch_quantile";
  std::string sampling = "per_pair";
  std::string context = "offline";
  double sigma_sq = 1.0;
  double zero_prior_variance = 1.0;
  double injected_prior_variance = 0.02;
  double linucb_alpha = 1.0;
  std::size_t comparators = 3;
  std::optional<std::size_t> history_capacity;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> n_seeds;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out_dir;
  bool log = false;
};

int cmd_run_sim(const SimOptions& o) {
  sim::SimScenario scenario = o.source.load();
  if (o.steps) scenario.n_steps = *o.steps;
  if (o.batch) scenario.pairs_per_step = *o.batch;
  if (o.n_seeds) {
    scenario.seeds.clear();
    for (std::size_t k = 0; k < *o.n_seeds; ++k) scenario.seeds.push_back(o.seed + k);
  } else {
    for (auto& s : scenario.seeds) s += o.seed;
  }
  if (scenario.drift && scenario.drift->at_step >= scenario.n_steps) scenario.drift->at_step = scenario.n_steps / 2;
  scenario.validate();

  const bool injected = o.prior == "injected";
  std::vector<sim::RouterSpec> routers;
  for (const auto& name : o.routers) {
    if (name == "all") {
      const auto suite = sim::default_suite(scenario.n_arms());
      routers.insert(routers.end(), suite.begin(), suite.end());
      continue;
    }
    sim::RouterSpec spec = sim::RouterSpec::parse(name);
    if (spec.kind == sim::RouterKind::kThompson && injected) {
      if (o.prior_file.empty()) {
        throw ConfigError("--router thompson --prior injected requires --prior-file");
      }
      spec.kind = sim::RouterKind::kHybrid;
    }
    routers.push_back(spec);
  }

  sim::ExperimentConfig config;
  config.sigma_sq = o.sigma_sq;
  config.zero_prior_variance = o.zero_prior_variance;
  config.injected_prior_variance = o.injected_prior_variance;
  config.linucb_alpha = o.linucb_alpha;
  config.reward = sim::parse_reward_kind(o.reward);
  config.sampling = o.sampling == "per_batch" ? SamplingMode::kPerBatch : SamplingMode::kPerPair;
  config.context = o.context == "raw" ? sim::ContextSource::kRawFeatures : sim::ContextSource::kOfflineEmbedding;
  config.light_comparators = o.comparators;
  config.history_capacity = o.history_capacity;
  if (!o.prior_file.empty()) {
    const json doc = read_document(o.prior_file);
    if (doc.value("kind", "") == "offline_router_model") {
      config.pretrained = offline_model_from_json(doc);
    } else {
      config.external_prior = prior_from_json(doc);
    }
  }
  config.validate();

  std::vector<std::string> names;
  for (const auto& r : routers) names.push_back(r.name());
  json opts = o.source.describe();
  opts.update({{"routers", names},
               {"prior", o.prior},
               {"prior_file", o.prior_file},
               {"reward", o.reward},
               {"sampling", o.sampling},
               {"context", o.context},
               {"sigma_sq", o.sigma_sq},
               {"zero_prior_variance", o.zero_prior_variance},
               {"injected_prior_variance", o.injected_prior_variance},
               {"linucb_alpha", o.linucb_alpha},
               {"comparators", o.comparators},
               {"history_capacity", o.history_capacity ? json(*o.history_capacity) : json(nullptr)},
               {"n_steps", scenario.n_steps},
               {"pairs_per_step", scenario.pairs_per_step},
               {"seeds", scenario.seeds}});
  const json prov = provenance("run-sim", opts);

  spdlog::info("running {} router(s) x {} seed(s) on '{}'", routers.size(), scenario.seeds.size(), scenario.name);
  std::vector<sim::ReplayLog> logs;
  const auto runs = sim::run_experiment(scenario, routers, config, o.jobs, o.log ? &logs : nullptr);

  const fs::path dir(o.out_dir);
  std::string metrics = io::provenance_line(prov);
  std::vector<sim::SeedResult> summary;
  std::vector<std::string> problems;
  const std::size_t n_seeds = scenario.seeds.size();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& m = runs[k];
    for (std::size_t t = 0; t < m.routing_accuracy_per_step.size(); ++t) {
      metrics += sim::step_record(m, t).dump();
      metrics += '\n';
    }
    summary.push_back(sim::summarize(m));
    for (auto& p : sim::check_run(m, routers[k / n_seeds], scenario, config)) problems.push_back(std::move(p));
    if (m.mean_weight) {
      spdlog::debug("{} seed {}: mean weight {:.4f}, weighted accuracy {:.4f}", m.router, m.seed, *m.mean_weight,
                   *m.weighted_accuracy);
    }
  }
  io::write_file(dir / "metrics.jsonl", metrics);
  io::write_file(dir / "summary.csv", sim::summary_csv(summary, "provenance: " + provenance_comment(prov)));

  if (o.log) {
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const std::string stem = safe_name(runs[k].router) + "-seed" + std::to_string(runs[k].seed);
      std::string decisions = io::provenance_line(prov);
      for (const auto& line : logs[k].decisions) decisions += line.dump() + "\n";
      io::write_file(dir / "logs" / (stem + ".decisions.jsonl"), decisions);
      if (!logs[k].rewards.empty()) {
        std::string rewards = io::provenance_line(prov);
        for (const auto& line : logs[k].rewards) rewards += line.dump() + "\n";
        io::write_file(dir / "logs" / (stem + ".rewards.jsonl"), rewards);
      }
      if (logs[k].final_state) write_document(dir / "logs" / (stem + ".state.json"), *logs[k].final_state, prov);
    }
  }

  if (routers.size() > 1) {
    std::string baseline = names.front();
    for (const auto& n : names) {
      if (n == "random") baseline = n;
    }
    std::cout << sim::compare_runs(summary, baseline).table();
  } else {
    double acc = 0.0;
    for (const auto& r : summary) acc += r.final_annotation_accuracy;
    std::printf("%s: mean final annotation accuracy %.4f over %zu seed(s)\n", names.front().c_str(),
                acc / static_cast<double>(summary.size()), summary.size());
  }

  for (const auto& p : problems) spdlog::error("invariant violated: {}", p);
  return problems.empty() ? kExitOk : kExitInvariant;
}

// compare ----------------------------------------------------------------

struct CompareOptions {
  std::vector<std::string> inputs;
  std::string baseline = "random";
  std::string out;
};

int cmd_compare(const CompareOptions& o) {
  std::vector<sim::SeedResult> rows;
  for (const auto& in : o.inputs) {
    auto part = sim::parse_summary_csv(io::read_file(in));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto report = sim::compare_runs(rows, o.baseline);
  std::cout << report.table();
  if (!o.out.empty()) {
    const json prov = provenance("compare", {{"inputs", o.inputs}, {"baseline", o.baseline}});
    io::write_file(o.out, report.csv("provenance: " + provenance_comment(prov)));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Reward-model routing: offline router training, online Thompson routing and simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  MakeScenarioOptions make_o;
  auto* make = app.add_subcommand("make-scenario", "Generate a synthetic dataset, features and RM annotations");
  add_scenario_options(make, make_o.source);
  make->add_option("--seed", make_o.seed, "Generation seed");
  make->add_option("--out-dir", make_o.out_dir, "Output directory")->required();

  CollectOptions collect_o;
  auto* collect = app.add_subcommand("collect-behavior", "Record which RM labels each pair correctly");
  collect->add_option("--dataset", collect_o.dataset, "Labeled dataset JSONL")->required()->check(CLI::ExistingFile);
  collect->add_option("--annotations", collect_o.annotations, "RM annotations JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  collect->add_option("--out", collect_o.out, "Behavior records JSONL")->required();

  TrainOptions train_o;
  auto* train = app.add_subcommand("train-offline", "Train the offline router (BT + CLS heads)");
  train->add_option("--dataset", train_o.dataset, "Labeled dataset JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--behavior", train_o.behavior, "Behavior records JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--embeddings", train_o.embeddings, "Precomputed fusion inputs JSONL")->check(CLI::ExistingFile);
  train->add_option("--out", train_o.out, "Model JSON")->required();
  train->add_option("--loss-csv", train_o.loss_csv, "Per-epoch loss CSV");
  train->add_option("--lambda", train_o.lambda, "CLS loss weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--lr", train_o.lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--epochs", train_o.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--batch-size", train_o.batch_size, "Pairs per mini-batch")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", train_o.weight_decay, "Decoupled weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--embed-dim", train_o.embed_dim, "Router embedding dimension d")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--encoder-dim", train_o.encoder_dim, "Hashing encoder dimension")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--optimizer", train_o.optimizer, "adamw or sgd")->capture_default_str()->check(CLI::IsMember({"adamw", "sgd"}));
  train->add_option("--momentum", train_o.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--activation", train_o.activation, "Fusion activation")->capture_default_str()->check(CLI::IsMember({"tanh", "linear"}));
  train->add_option("--seed", train_o.seed, "Seed")->capture_default_str();
  train->add_option("--holdout", train_o.holdout, "Held-out fraction")->capture_default_str()->check(CLI::Range(0.0, 0.9));

  ExportOptions export_o;
  auto* exp = app.add_subcommand("export-prior", "Write the BT embedding matrix as an online prior");
  exp->add_option("--model", export_o.model, "Model JSON")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", export_o.out, "Prior JSON")->required();

  InitOptions init_o;
  auto* init = app.add_subcommand("init-router", "Write a fresh online router state");
  init->add_option("--arms", init_o.arms, "Number of RMs");
  init->add_option("--dim", init_o.dim, "Context dimension");
  init->add_option("--prior", init_o.prior, "zero or injected")->capture_default_str()->check(CLI::IsMember({"zero", "injected"}));
  init->add_option("--prior-file", init_o.prior_file, "Prior JSON (from export-prior)")->check(CLI::ExistingFile);
  init->add_option("--sigma-sq", init_o.sigma_sq, "Observation noise variance")->capture_default_str();
  init->add_option("--prior-variance", init_o.prior_variance, "Prior variance (default 1, or 0.02 when injected)");
  init->add_option("--sampling", init_o.sampling, "per_pair or per_batch")->capture_default_str()->check(CLI::IsMember({"per_pair", "per_batch"}));
  init->add_option("--out", init_o.out, "State JSON")->required();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Summarize a router state, model, posterior or prior file");
  inspect->add_option("file", inspect_path, "Document to inspect")->required()->check(CLI::ExistingFile);

  SimOptions sim_o;
  auto* run = app.add_subcommand("run-sim", "Replay a synthetic scenario through one or more routers");
  add_scenario_options(run, sim_o.source);
  run->add_option("--router", sim_o.routers, "Router(s), comma separated, or 'all'")
      ->delimiter(',')
      ->capture_default_str();
  run->add_option("--prior", sim_o.prior, "Prior of the thompson router")->capture_default_str()->check(CLI::IsMember({"zero", "injected"}));
  run->add_option("--prior-file", sim_o.prior_file, "Offline model or prior JSON")->check(CLI::ExistingFile);
  run->add_option("--reward", sim_o.reward, "batch_quantile, neg_loss, full_advantage or light_advantage")->capture_default_str();
  run->add_option("--sampling", sim_o.sampling, "per_pair or per_batch")->capture_default_str()->check(CLI::IsMember({"per_pair", "per_batch"}));
  run->add_option("--context", sim_o.context, "offline (router embedding) or raw (scenario features)")->capture_default_str()->check(CLI::IsMember({"offline", "raw"}));
  run->add_option("--sigma-sq", sim_o.sigma_sq, "Observation noise variance")->capture_default_str();
  run->add_option("--zero-prior-variance", sim_o.zero_prior_variance, "Prior variance without injection")->capture_default_str();
  run->add_option("--injected-prior-variance", sim_o.injected_prior_variance, "Prior variance with injection")->capture_default_str();
  run->add_option("--linucb-alpha", sim_o.linucb_alpha, "LinUCB exploration weight")->capture_default_str();
  run->add_option("--comparators", sim_o.comparators, "Light-advantage comparators C")->capture_default_str();
  run->add_option("--history-capacity", sim_o.history_capacity, "Reward history ring-buffer size");
  run->add_option("--steps", sim_o.steps, "Override the number of steps");
  run->add_option("--batch", sim_o.batch, "Override pairs per step");
  run->add_option("--seeds", sim_o.n_seeds, "Run seeds seed..seed+N-1");
  run->add_option("--seed", sim_o.seed, "Base seed")->capture_default_str();
  run->add_option("--jobs", sim_o.jobs, "Seeds run in parallel")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--out-dir", sim_o.out_dir, "Output directory")->required();
  run->add_flag("--log", sim_o.log, "Write decision, reward and state logs");

  CompareOptions compare_o;
  auto* compare = app.add_subcommand("compare", "Paired comparison of summary CSVs against a baseline");
  compare->add_option("--input", compare_o.inputs, "Summary CSV(s)")->required()->check(CLI::ExistingFile);
  compare->add_option("--baseline", compare_o.baseline, "Baseline method")->capture_default_str();
  compare->add_option("--out", compare_o.out, "Comparison CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (make->parsed()) return cmd_make_scenario(make_o);
    if (collect->parsed()) return cmd_collect_behavior(collect_o);
    if (train->parsed()) return cmd_train_offline(train_o);
    if (exp->parsed()) return cmd_export_prior(export_o);
    if (init->parsed()) return cmd_init_router(init_o);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
    if (run->parsed()) return cmd_run_sim(sim_o);
    if (compare->parsed()) return cmd_compare(compare_o);
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return kExitInvariant;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
