#include <random>

#include <benchmark/benchmark.h>

#include "hli/aulm.hpp"
#include "hli/eval.hpp"
#include "hli/losses.hpp"
#include "hli/model.hpp"
#include "hli/normalize.hpp"
#include "hli/pseudo.hpp"

namespace {

hli::Matrix gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  hli::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

hli::Tensor batch(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  hli::Tensor t({n, 3, 64, 32});
  for (double& v : t.data) v = u(rng);
  return t;
}

hli::ArchConfig arch() {
  hli::ArchConfig a;
  a.num_classes = 16;
  return a;
}

void BM_Forward(benchmark::State& state) {
  const hli::Network net(arch());
  const auto params = net.init_params(1);
  const auto x = batch(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(params, x, hli::Mode::kEval));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const hli::Network net(arch());
  const auto params = net.init_params(1);
  const auto x = batch(static_cast<int>(state.range(0)), 2);
  auto grads = params.zeros_like();
  for (auto _ : state) {
    hli::ForwardCache cache;
    const auto out = net.forward(params, x, hli::Mode::kTrain, &cache);
    grads.set_zero();
    net.backward(params, cache, hli::Matrix::Ones(out.embedding.rows(), out.embedding.cols()),
                 hli::Matrix::Ones(out.logits.rows(), out.logits.cols()), grads);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_BaseLosses(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto s_emb = hli::l2_normalize_rows(gaussian(n, 64, 1));
  const auto t_emb = hli::l2_normalize_rows(gaussian(n, 64, 2));
  const auto s_log = gaussian(n, 16, 3), t_log = gaussian(n, 16, 4);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i / 4;
  for (auto _ : state) benchmark::DoNotOptimize(hli::base_losses(s_log, s_emb, t_log, t_emb, labels, 0.3));
}
BENCHMARK(BM_BaseLosses)->Arg(32)->Arg(64);

void BM_StructureDistillation(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto s = hli::l2_normalize_rows(gaussian(n, 64, 1));
  const auto t = hli::relation_matrix(hli::l2_normalize_rows(gaussian(n, 64, 2)));
  for (auto _ : state) benchmark::DoNotOptimize(hli::structure_distillation_loss(s, t));
}
BENCHMARK(BM_StructureDistillation)->Arg(32)->Arg(64);

void BM_Evaluate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto emb = gaussian(n, 64, 5);
  std::vector<int> ids(n), cams(n);
  for (int i = 0; i < n; ++i) {
    ids[i] = i / 10;
    cams[i] = i % 4;
  }
  for (auto _ : state) benchmark::DoNotOptimize(hli::evaluate(emb, ids, cams));
}
BENCHMARK(BM_Evaluate)->Arg(160)->Arg(640)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  const auto emb = hli::l2_normalize_rows(gaussian(static_cast<int>(state.range(0)), 64, 6));
  for (auto _ : state) benchmark::DoNotOptimize(hli::cluster_targets(emb, 16, 7));
}
BENCHMARK(BM_KMeans)->Arg(160)->Arg(640)->Unit(benchmark::kMillisecond);

void BM_AdaptiveErase(benchmark::State& state) {
  const auto x = batch(32, 8);
  std::mt19937_64 rng(9);
  const auto points = hli::random_points(32, 64, 32, rng);
  hli::EraseConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(hli::adaptive_erase(x, points, cfg, rng));
}
BENCHMARK(BM_AdaptiveErase);

}  // namespace
BENCHMARK_MAIN();
