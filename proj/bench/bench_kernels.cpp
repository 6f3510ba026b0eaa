#include <benchmark/benchmark.h>

#include <vector>

#include "windinr/kernels.hpp"
#include "windinr/rng.hpp"

using namespace windinr;
using namespace windinr::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -1, 1);
  return v;
}

// Decoder-sized product: a batch of query points times a hidden-layer weight.
template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0)), k = 256, n = 256;
  const auto a = random_vector(m * k, 1), b = random_vector(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::gemm_nn(m, k, n, a.data(), b.data(), c.data(), false);
    else
      serial::gemm_nn(m, k, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(2 * m * k * n));
}

template <bool Parallel>
void BM_GemmTN(benchmark::State& state) {
  const std::size_t k = static_cast<std::size_t>(state.range(0)), m = 256, n = 256;
  const auto a = random_vector(k * m, 3), b = random_vector(k * n, 4);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::gemm_tn(m, k, n, a.data(), b.data(), c.data(), false);
    else
      serial::gemm_tn(m, k, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(2 * m * k * n));
}

// Terrain-encoder convolution input: 32 x 32 map, 64 channels.
template <bool Parallel>
void BM_Im2col(benchmark::State& state) {
  const std::size_t h = 32, w = 32, ch = 64;
  const auto in = random_vector(h * w * ch, 5);
  std::vector<double> cols(h * w * 9 * ch);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::im2col3x3(h, w, ch, in.data(), cols.data(), Padding::zero);
    else
      serial::im2col3x3(h, w, ch, in.data(), cols.data(), Padding::zero);
    benchmark::DoNotOptimize(cols.data());
  }
}

template <bool Parallel>
void BM_BilinearGather(benchmark::State& state) {
  const std::size_t h = 32, w = 32, ch = 64, n = static_cast<std::size_t>(state.range(0));
  const auto map = random_vector(h * w * ch, 6);
  Rng rng(7);
  std::vector<PixelCoord> at(n);
  for (auto& p : at) p = {uniform(rng, 0, 31), uniform(rng, 0, 31)};
  std::vector<double> out(n * ch);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::bilinear_gather(h, w, ch, map.data(), n, at.data(), out.data());
    else
      serial::bilinear_gather(h, w, ch, map.data(), n, at.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmNN<false>)->Arg(128)->Arg(1024);
BENCHMARK(BM_GemmNN<true>)->Arg(128)->Arg(1024);
BENCHMARK(BM_GemmTN<false>)->Arg(1024);
BENCHMARK(BM_GemmTN<true>)->Arg(1024);
BENCHMARK(BM_Im2col<false>);
BENCHMARK(BM_Im2col<true>);
BENCHMARK(BM_BilinearGather<false>)->Arg(4096);
BENCHMARK(BM_BilinearGather<true>)->Arg(4096);

BENCHMARK_MAIN();
