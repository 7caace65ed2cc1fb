#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "rmrouter/features.hpp"
#include "rmrouter/gaussian.hpp"
#include "rmrouter/offline_router.hpp"
#include "rmrouter/online_router.hpp"
#include "support/generators.hpp"

namespace {

using namespace rmrouter;

void BM_PosteriorUpdate(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  const auto prior = make_prior(d, Eigen::VectorXd::Zero(d), 1.0, 1.0);
  const auto batch = testgen::batch(d, 64, rng);
  for (auto _ : state) benchmark::DoNotOptimize(posterior_update(prior, batch));
}
BENCHMARK(BM_PosteriorUpdate)->Arg(8)->Arg(64);

void BM_RouteBatch(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  Rng rng(2);
  const auto router = init_router(4, d, PriorMode::kZero, std::nullopt, 1.0, 1.0);
  std::vector<PairContext> batch;
  for (int i = 0; i < 64; ++i) batch.push_back({std::to_string(i), testgen::vector(d, rng)});
  for (auto _ : state) benchmark::DoNotOptimize(route_batch(router, batch, rng));
}
BENCHMARK(BM_RouteBatch)->Arg(8)->Arg(64);

void BM_EncodeText(benchmark::State& state) {
  const HashingEncoder encoder;
  const std::string text(static_cast<std::size_t>(state.range(0)), 'x');
  std::string varied = text;
  for (std::size_t i = 0; i < varied.size(); i += 7) varied[i] = ' ';
  for (auto _ : state) benchmark::DoNotOptimize(encoder.encode(varied));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeText)->Arg(256)->Arg(4096);

void BM_BatchLoss(benchmark::State& state) {
  Rng rng(3);
  const auto model = testgen::model(4, 64, 512, 0.2, rng);
  std::vector<PairExample> examples;
  for (int i = 0; i < 8; ++i) examples.push_back(testgen::example(4, 512, rng));
  std::vector<const PairExample*> ptrs;
  for (const auto& ex : examples) ptrs.push_back(&ex);
  OfflineGradients grad;
  for (auto _ : state) benchmark::DoNotOptimize(batch_loss(model, ptrs, &grad));
}
BENCHMARK(BM_BatchLoss);

}  // namespace

BENCHMARK_MAIN();
