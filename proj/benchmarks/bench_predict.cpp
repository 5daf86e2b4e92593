#include <benchmark/benchmark.h>

#include <random>

#include "oodbound/oodbound.hpp"

using namespace oodbound;

namespace {

std::vector<Eigen::VectorXd> random_inputs(std::size_t n, Eigen::Index dim) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> xs(n, Eigen::VectorXd(dim));
  for (auto& x : xs)
    for (auto& v : x) v = normal(rng);
  return xs;
}

void BM_PredictBatch(benchmark::State& state) {
  const auto classes = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 64;
  auto [train, test] = synth_blobs({.classes = classes, .dim = dim, .per_class = 10, .sigma = 0.05, .seed = 1});
  auto [proj, head] = init_params(dim, dim, classes, 1);
  const auto model = fit_boundaries(train, proj, BoundaryParams{});
  const auto xs = random_inputs(1000, static_cast<Eigen::Index>(dim));
  for (auto _ : state) benchmark::DoNotOptimize(predict_batch(model, xs));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(xs.size()));
}
BENCHMARK(BM_PredictBatch)->Arg(8)->Arg(38)->Arg(150)->Unit(benchmark::kMillisecond);

void BM_Fit(benchmark::State& state) {
  const auto loss = state.range(0) == 0 ? LossKind::Lmcl : LossKind::Triplet;
  auto [train, test] = synth_blobs({.classes = 8, .dim = 32, .per_class = 50, .sigma = 0.05, .seed = 2});
  TrainConfig config;
  config.loss = loss;
  for (auto _ : state) benchmark::DoNotOptimize(fit(train, config, BoundaryParams{}));
  state.SetLabel(std::string(to_string(loss)));
}
BENCHMARK(BM_Fit)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SearchRadius(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  std::vector<double> ind(static_cast<std::size_t>(state.range(0)) / 10), ood(static_cast<std::size_t>(state.range(0)));
  for (auto& d : ind) d = 0.2 * unit(rng);
  for (auto& d : ood) d = unit(rng);
  for (auto _ : state) benchmark::DoNotOptimize(search_radius(ind, ood, 9.0, BoundaryParams{}));
}
BENCHMARK(BM_SearchRadius)->Arg(1000)->Arg(15000);

}  // namespace

BENCHMARK_MAIN();
