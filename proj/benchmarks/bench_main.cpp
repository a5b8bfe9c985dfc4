#include <benchmark/benchmark.h>

#include <random>

#include "terralabel/ingest/chips.hpp"
#include "terralabel/ingest/synthetic.hpp"
#include "terralabel/matching/hungarian.hpp"
#include "terralabel/matching/similarity.hpp"
#include "terralabel/numerics/ops.hpp"
#include "terralabel/superpixels/slic.hpp"

using namespace terralabel;

namespace {

std::vector<float> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void BM_Hungarian(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> cost(n * n);
  for (auto& c : cost) c = d(rng);
  for (auto _ : state) benchmark::DoNotOptimize(matching::hungarian(cost, n, n));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hungarian)->RangeMultiplier(2)->Range(8, 512)->Complexity();

// 3x3 convolution at U-Net widths on a 64x64 map.
void BM_Conv2d(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  const auto x = numerics::Tensor::from({1, c, 64, 64}, uniform(c * 64 * 64, 2));
  const auto w = numerics::Tensor::from({c, c, 3, 3}, uniform(c * c * 9, 3));
  for (auto _ : state) benchmark::DoNotOptimize(numerics::conv2d(x, w, 1));
  state.counters["MAC/s"] = benchmark::Counter(double(c * c * 9 * 64 * 64), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Slic(benchmark::State& state) {
  ingest::SyntheticTileOptions o;
  o.height = o.width = 256;
  const auto chip = ingest::chip_tile(ingest::make_synthetic_tile(o).tile)[0];
  superpixels::SlicOptions so;
  so.n_segments = std::size_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(superpixels::slic(chip, so));
}
BENCHMARK(BM_Slic)->Arg(200)->Arg(500)->Arg(800)->Unit(benchmark::kMillisecond);

// All-pairs chip similarity: n chips of 500 segments x 60 dims.
void BM_SimilarityMatrix(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  std::vector<matching::SegmentEmbedding> emb(n);
  for (std::size_t i = 0; i < n; ++i) {
    emb[i] = {"c" + std::to_string(i), 500, 60, uniform(500 * 60, 10 + i)};
  }
  for (auto _ : state) benchmark::DoNotOptimize(matching::similarity_matrix(emb));
  state.counters["pairs"] = double(n * (n - 1) / 2);
}
BENCHMARK(BM_SimilarityMatrix)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
