#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dtfl/alignment.hpp"
#include "dtfl/data.hpp"
#include "dtfl/engine.hpp"
#include "dtfl/metrics.hpp"
#include "dtfl/nn.hpp"

namespace {

using namespace dtfl;

data::ScenarioData scenario(std::size_t rows) {
  data::SyntheticScenario s;
  s.n_real = rows;
  s.n_twin = rows;
  return data::generate_scenario(s);
}

void BM_Forward(benchmark::State& state) {
  const auto g = scenario(static_cast<std::size_t>(state.range(0)));
  const auto params = fl::initial_params(nn::ModelArch::mlp(g.real.dim, {16, 8}), 0);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(params, g.real.view()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(10)->Arg(1000);

void BM_BceGradient(benchmark::State& state) {
  const auto g = scenario(static_cast<std::size_t>(state.range(0)));
  const auto params = fl::initial_params(nn::ModelArch::mlp(g.real.dim, {16, 8}), 0);
  for (auto _ : state) benchmark::DoNotOptimize(nn::bce_loss_and_grad(params, g.real.view(), g.real.labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BceGradient)->Arg(10)->Arg(1000);

void BM_LocalTrain(benchmark::State& state) {
  const auto g = scenario(200);
  const auto params = fl::initial_params(nn::ModelArch::mlp(g.real.dim, {16, 8}), 0);
  const fl::LocalTrainSpec spec{2, 10, {}};
  for (auto _ : state)
    benchmark::DoNotOptimize(fl::local_train(params, g.real, spec, fl::BceObjective{}, {0, 0, 0, 0, "client"}));
}
BENCHMARK(BM_LocalTrain);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = std::generate_canonical<double, 53>(rng);
    labels[i] = static_cast<std::uint8_t>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::roc_auc(scores, labels));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

void BM_SlicedWasserstein(benchmark::State& state) {
  const auto g = scenario(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(align::sliced_wasserstein(g.real, g.twin, 64, 0));
}
BENCHMARK(BM_SlicedWasserstein)->Arg(1000)->Arg(4000);

}  // namespace

BENCHMARK_MAIN();
