#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Core>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "rmrouter/errors.hpp"
#include "rmrouter/offline_router.hpp"
#include "rmrouter/serialization.hpp"
#include "rmrouter/sim_harness.hpp"
#include "rmrouter/sim_scenario.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace rmrouter {
namespace {

OfflineRouterModel scalar_model(double winner_score, double loser_score) {
  OfflineRouterModel m;
  m.fusion = FusionParams{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), Activation::kLinear};
  m.bt_embeddings.resize(2, 1);
  m.bt_embeddings << winner_score, loser_score;
  m.cls_embeddings = m.bt_embeddings;
  return m;
}

PairEmbedding unit_h() { return PairEmbedding{Eigen::VectorXd::Ones(1)}; }

TEST(Losses, BtScalarValues) {
  const DisagreementSample s{"p", 0, 1};
  EXPECT_NEAR(bt_loss(scalar_model(0.3, 0.3), unit_h(), s), std::log(2.0), 1e-12);
  EXPECT_NEAR(bt_loss(scalar_model(1.0, 0.0), unit_h(), s), 0.313262, 1e-6);
  EXPECT_LT(bt_loss(scalar_model(20.0, 0.0), unit_h(), s), 1e-8);
  EXPECT_GE(bt_loss(scalar_model(-30.0, 0.0), unit_h(), s), 0.0);
}

TEST(Losses, ClsScalarValues) {
  EXPECT_NEAR(cls_loss(scalar_model(0.0, 0.0), unit_h(), BehaviorRecord{"p", 0, true}), std::log(2.0), 1e-12);
  EXPECT_NEAR(cls_loss(scalar_model(0.0, 0.0), unit_h(), BehaviorRecord{"p", 0, false}), std::log(2.0), 1e-12);
  EXPECT_NEAR(cls_loss(scalar_model(2.0, 0.0), unit_h(), BehaviorRecord{"p", 0, true}), 0.126928, 1e-6);
}

TEST(Losses, BtStrictlyDecreasingInGap) {
  const DisagreementSample s{"p", 0, 1};
  double previous = bt_loss(scalar_model(-10.0, 0.0), unit_h(), s);
  for (double gap = -9.5; gap <= 10.0; gap += 0.5) {
    const double current = bt_loss(scalar_model(gap, 0.0), unit_h(), s);
    ASSERT_LT(current, previous) << "gap " << gap;
    previous = current;
  }
}

class FixedPool : public RmPool {
 public:
  explicit FixedPool(std::vector<Preference> answers) : answers_(std::move(answers)) {}
  std::size_t size() const override { return answers_.size(); }

 protected:
  Preference do_annotate(const PreferencePair&, std::size_t rm) override { return answers_[rm]; }

 private:
  std::vector<Preference> answers_;
};

TEST(CollectBehavior, AllCorrect) {
  FixedPool pool(std::vector<Preference>(4, Preference::kA));
  const std::vector<PreferencePair> data = {{"p", "q", "a", "b", Preference::kA}};
  const auto records = collect_behavior(data, pool);
  ASSERT_EQ(records.size(), 4u);
  for (std::size_t n = 0; n < 4; ++n) {
    EXPECT_EQ(records[n].rm_index, n);
    EXPECT_TRUE(records[n].correct);
  }
  EXPECT_EQ(pool.calls(), 4u);
}

TEST(CollectBehavior, EmptyAndUnlabeled) {
  FixedPool pool({Preference::kA, Preference::kB});
  EXPECT_TRUE(collect_behavior(std::vector<PreferencePair>{}, pool).empty());
  const std::vector<PreferencePair> unlabeled = {{"p", "q", "a", "b", std::nullopt}};
  EXPECT_THROW(collect_behavior(unlabeled, pool), InputError);
}

TEST(CollectBehavior, MatchesSyntheticTruthTable) {
  const auto scenario = sim::preset_scenario("two_cluster");
  const auto data = sim::generate_scenario(scenario, 3);
  sim::SyntheticRmPool pool(data);
  const std::span<const PreferencePair> first(data.pairs.data(), 200);
  const auto records = collect_behavior(first, pool);
  ASSERT_EQ(records.size(), 400u);
  for (const auto& r : records) {
    EXPECT_EQ(r.correct, data.correct(data.index_of.at(r.pair_id), r.rm_index));
  }
}

std::vector<BehaviorRecord> records_for(const std::vector<int>& bits) {
  std::vector<BehaviorRecord> out;
  for (std::size_t n = 0; n < bits.size(); ++n) out.push_back({"p", n, bits[n] != 0});
  return out;
}

TEST(Disagreements, Enumeration) {
  const auto four = extract_disagreements(records_for({1, 1, 0, 0}));
  ASSERT_EQ(four.size(), 4u);
  const std::vector<std::pair<std::size_t, std::size_t>> expected = {{0, 2}, {0, 3}, {1, 2}, {1, 3}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(four[i].winner_rm, expected[i].first);
    EXPECT_EQ(four[i].loser_rm, expected[i].second);
  }
  EXPECT_TRUE(extract_disagreements(records_for({1, 1, 1})).empty());
  EXPECT_TRUE(extract_disagreements(records_for({0, 0})).empty());
  const auto one = extract_disagreements(records_for({1, 0}));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].winner_rm, 0u);
  EXPECT_EQ(one[0].loser_rm, 1u);
}

// Property: count equals (#correct) * (#incorrect) for every bit pattern.
TEST(Disagreements, CountProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = testgen::uniform_index(rng, 1, 8);
    std::vector<int> bits(static_cast<std::size_t>(n));
    int ones = 0;
    for (int& b : bits) ones += (b = std::bernoulli_distribution(0.5)(rng) ? 1 : 0);
    const auto samples = extract_disagreements(records_for(bits));
    ASSERT_EQ(samples.size(), static_cast<std::size_t>(ones * (n - ones)));
    for (const auto& s : samples) {
      ASSERT_EQ(bits[s.winner_rm], 1);
      ASSERT_EQ(bits[s.loser_rm], 0);
    }
  }
}

enum class Objective { kBt, kCls, kTotal };

void check_gradient(Objective objective, std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n_arms = static_cast<std::size_t>(testgen::uniform_index(rng, 2, 4));
    const auto d = testgen::uniform_index(rng, 1, 8);
    const auto input_dim = testgen::uniform_index(rng, 2, 8);
    const double lambda = objective == Objective::kBt ? 0.0 : testgen::uniform(rng, 0.05, 1.0);
    auto model = testgen::model(n_arms, d, input_dim, lambda, rng);
    if (testgen::uniform(rng, 0.0, 1.0) < 0.25) model.fusion.activation = Activation::kLinear;
    std::vector<PairExample> batch;
    const auto size = testgen::uniform_index(rng, 1, 4);
    for (Eigen::Index i = 0; i < size; ++i) {
      batch.push_back(testgen::example(n_arms, input_dim, rng, objective != Objective::kCls));
    }
    if (objective != Objective::kCls && oracle::batch_loss(model, batch).n_bt == 0) {
      batch.front().behavior[0].second = true;
      batch.front().behavior[1].second = false;
      batch.front().disagreements = {{0, 1}};
    }
    std::vector<const PairExample*> ptrs;
    for (const auto& ex : batch) ptrs.push_back(&ex);

    OfflineGradients grad;
    const BatchLoss analytic = batch_loss(model, ptrs, &grad);
    const BatchLoss expected = oracle::batch_loss(model, batch);
    ASSERT_NEAR(analytic.total, expected.total, 1e-10);
    ASSERT_EQ(analytic.total, analytic.bt + model.lambda * analytic.cls);

    const double err = oracle::relative_error(oracle::flatten(grad), oracle::numeric_gradient(model, batch));
    ASSERT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(GradientCheck, BradleyTerryOnly) { check_gradient(Objective::kBt, 101); }
TEST(GradientCheck, ClassificationOnly) { check_gradient(Objective::kCls, 202); }
TEST(GradientCheck, Combined) { check_gradient(Objective::kTotal, 303); }

TEST(BatchLoss, LambdaZeroLeavesClsGradientZero) {
  Rng rng(9);
  const auto model = testgen::model(3, 4, 5, 0.0, rng);
  std::vector<PairExample> batch = {testgen::example(3, 5, rng), testgen::example(3, 5, rng)};
  std::vector<const PairExample*> ptrs = {&batch[0], &batch[1]};
  OfflineGradients grad;
  batch_loss(model, ptrs, &grad);
  EXPECT_EQ(grad.cls.cwiseAbs().maxCoeff(), 0.0);
}

std::vector<PairExample> sim_examples(std::size_t count, bool with_disagreements, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(testgen::example(3, 6, rng, with_disagreements));
  return out;
}

TEST(TrainOffline, EmptyDisagreementSetThrows) {
  TrainConfig config;
  config.embed_dim = 4;
  EXPECT_THROW(train_offline(sim_examples(10, false, 1), config), TrainError);
}

TEST(TrainOffline, LambdaZeroNeverTouchesClsHead) {
  TrainConfig config;
  config.embed_dim = 4;
  config.lambda = 0.0;
  config.epochs = 3;
  const auto model = train_offline(sim_examples(40, true, 2), config);
  EXPECT_EQ(model.meta.cls_grad_max_abs, 0.0);
  config.lambda = 0.2;
  EXPECT_GT(train_offline(sim_examples(40, true, 2), config).meta.cls_grad_max_abs, 0.0);
}

TEST(TrainOffline, DeterministicGivenSeed) {
  TrainConfig config;
  config.embed_dim = 4;
  const auto examples = sim_examples(30, true, 3);
  const auto a = io::dump_document(to_json(train_offline(examples, config)));
  const auto b = io::dump_document(to_json(train_offline(examples, config)));
  EXPECT_EQ(a, b);
  config.optimizer = Optimizer::kSgd;
  const auto c = io::dump_document(to_json(train_offline(examples, config)));
  EXPECT_EQ(c, io::dump_document(to_json(train_offline(examples, config))));
  EXPECT_NE(a, c);
}

TEST(TrainOffline, LearnsTwoSpecialistScenario) {
  const auto scenario = sim::preset_scenario("two_cluster");
  const auto data = sim::generate_scenario(scenario, 0);
  const auto model = sim::prepare_offline_model(data, sim::sim_train_config());
  EXPECT_EQ(model.lambda, 0.2);
  EXPECT_EQ(model.meta.epochs, 2);
  EXPECT_GE(sim::evaluate_offline_routing(model, scenario, data, data.online), 0.95);
}

TEST(RouteOffline, BasisAndTies) {
  OfflineRouterModel m;
  m.fusion = FusionParams{Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4), Activation::kLinear};
  m.bt_embeddings = Eigen::MatrixXd::Identity(4, 4);
  m.cls_embeddings = Eigen::MatrixXd::Zero(4, 4);
  EXPECT_EQ(route_offline(m, PairEmbedding{Eigen::VectorXd::Unit(4, 2)}), 2u);
  m.bt_embeddings = Eigen::MatrixXd::Ones(4, 4);
  EXPECT_EQ(route_offline(m, PairEmbedding{Eigen::VectorXd::Unit(4, 2)}), 0u);
}

// Property: the chosen arm attains the maximum, and a uniform score shift
// (adding c to every row) keeps the choice.
TEST(RouteOffline, ArgmaxAndShiftInvariance) {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(testgen::uniform_index(rng, 1, 6));
    const auto d = testgen::uniform_index(rng, 1, 8);
    auto m = testgen::model(n, d, d, 0.2, rng);
    const PairEmbedding h{testgen::vector(d, rng)};
    const auto chosen = route_offline(m, h);
    const Eigen::VectorXd scores = m.bt_embeddings * h.vector;
    for (Eigen::Index k = 0; k < scores.size(); ++k) ASSERT_LE(scores[k], scores[static_cast<Eigen::Index>(chosen)]);
    const Eigen::RowVectorXd c = testgen::vector(d, rng).transpose();
    m.bt_embeddings.rowwise() += c;
    ASSERT_EQ(route_offline(m, h), chosen) << "trial " << trial;
  }
}

TEST(ExportPrior, VerbatimAndDecisionEquivalent) {
  Rng rng(23);
  auto model = testgen::model(4, 6, 6, 0.2, rng);
  const Eigen::MatrixXd prior = export_prior(model);
  EXPECT_TRUE(prior == model.bt_embeddings);
  const Eigen::MatrixXd reloaded = prior_from_json(io::parse_document(io::dump_document(prior_to_json(prior))));
  EXPECT_TRUE(reloaded == prior);
  auto copy = model;
  copy.bt_embeddings = reloaded;
  for (int i = 0; i < 100; ++i) {
    const auto h = model.embed(testgen::vector(6, rng));
    ASSERT_EQ(route_offline(model, h), route_offline(copy, h));
    ASSERT_EQ(model.bt_scores(h)[1], prior.row(1).dot(h.vector));
  }
}

TEST(ModelJson, SaveLoadSaveIsByteIdentical) {
  TrainConfig config;
  config.embed_dim = 4;
  const auto model = train_offline(sim_examples(30, true, 4), config);
  const std::string first = io::dump_document(to_json(model));
  const auto back = offline_model_from_json(io::parse_document(first));
  EXPECT_EQ(io::dump_document(to_json(back)), first);
  EXPECT_TRUE(back.bt_embeddings == model.bt_embeddings);
}

TEST(ModelJson, OtherVersionRejected) {
  Rng rng(1);
  auto doc = to_json(testgen::model(2, 3, 4, 0.2, rng));
  doc["version"] = 2;
  EXPECT_THROW(offline_model_from_json(doc), FormatError);
}

}  // namespace
}  // namespace rmrouter
