#include <benchmark/benchmark.h>

#include "lapmamba/lftm.hpp"
#include "lapmamba/network.hpp"
#include "lapmamba/ops.hpp"

using namespace lapmamba;

static void BM_SelectiveScan(benchmark::State& state) {
  const auto l = state.range(0);
  const std::int64_t d = 16, s = 8;
  Rng rng(1);
  Tensor u = Tensor::uniform({1, l, d}, rng, -1.0, 1.0);
  Tensor delta = Tensor::uniform({1, l, d}, rng, 0.01, 0.1);
  Tensor bs = Tensor::uniform({1, l, s}, rng, -1.0, 1.0);
  Tensor cs = Tensor::uniform({1, l, s}, rng, -1.0, 1.0);
  Tensor a = Tensor::uniform({d, s}, rng, -1.0, -0.1);
  Tensor dk = Tensor::uniform({d}, rng, -1.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::selective_scan(u, delta, bs, cs, a, dk));
  }
  state.SetComplexityN(l);
}
BENCHMARK(BM_SelectiveScan)->RangeMultiplier(2)->Range(512, 8192)->Complexity(benchmark::oN);

static void BM_Conv3x3(benchmark::State& state) {
  const auto hw = state.range(0);
  Rng rng(2);
  Tensor x = Tensor::uniform({1, 16, hw, hw}, rng, -1.0, 1.0);
  Tensor w = Tensor::uniform({16, 16, 3, 3}, rng, -0.1, 0.1);
  Tensor b = Tensor::zeros({16});
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
  }
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Arg(128);

static void BM_PyramidDecompose(benchmark::State& state) {
  const auto hw = state.range(0);
  Rng rng(3);
  Tensor x = Tensor::uniform({1, 3, hw, hw}, rng, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lftm::lft_multi(x, 3));
  }
}
BENCHMARK(BM_PyramidDecompose)->Arg(64)->Arg(128)->Arg(256);

static void BM_ModelForward(benchmark::State& state) {
  network::NetworkConfig cfg;
  cfg.channels = {4, 6, 8, 12, 8, 6, 4};
  cfg.lsrb_counts = {1, 1, 1, 1, 1, 1, 1};
  cfg.hdeb_counts = {1, 1, 1, 1, 1, 1, 1};
  cfg.nstate = 4;
  network::Model model = network::Model::build(cfg, 5);
  Rng rng(4);
  Tensor x = Tensor::uniform({1, 3, 64, 64}, rng, 0.0, 1.0);
  NoGradScope ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(x, false));
  }
}
BENCHMARK(BM_ModelForward);

BENCHMARK_MAIN();
