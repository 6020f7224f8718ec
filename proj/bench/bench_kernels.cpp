// Parallel kernels vs the serial reference at desk-model sizes
// (d_model 128, d_ff 512, sequences of 32-256 positions).

#include <benchmark/benchmark.h>

#include <vector>

#include "empt/kernels.hpp"
#include "empt/rng.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  empt::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform() - 0.5);
  return v;
}

template <bool kParallel>
void BM_MatmulNN(benchmark::State& state) {
  const std::size_t m = state.range(0), k = 128, n = 512;
  auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (kParallel) {
      empt::kernels::matmul_nn<float>(a, b, c, m, k, n);
    } else {
      empt::kernels::reference::matmul_nn<float>(a, b, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}

template <bool kParallel>
void BM_MatmulTN(benchmark::State& state) {
  const std::size_t m = state.range(0), k = 128, n = 512;
  auto a = random_vec(m * k, 3), b = random_vec(m * n, 4);
  std::vector<float> c(k * n);
  for (auto _ : state) {
    if constexpr (kParallel) {
      empt::kernels::matmul_tn<float>(a, b, c, m, k, n);
    } else {
      empt::kernels::reference::matmul_tn<float>(a, b, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}

template <bool kParallel>
void BM_Attention(benchmark::State& state) {
  const std::size_t n = state.range(0), heads = 4, hd = 32, d = heads * hd;
  auto q = random_vec(n * d, 5), k = random_vec(n * d, 6), v = random_vec(n * d, 7);
  std::vector<float> p(heads * n * n), o(n * d);
  for (auto _ : state) {
    if constexpr (kParallel) {
      empt::kernels::attention_forward<float>(q, k, v, {}, p, o, n, heads, hd);
    } else {
      empt::kernels::reference::attention_forward<float>(q, k, v, {}, p, o, n, heads, hd);
    }
    benchmark::DoNotOptimize(o.data());
  }
}

}  // namespace

BENCHMARK(BM_MatmulNN<false>)->Arg(32)->Arg(256)->Name("matmul_nn/reference");
BENCHMARK(BM_MatmulNN<true>)->Arg(32)->Arg(256)->Name("matmul_nn/parallel");
BENCHMARK(BM_MatmulTN<false>)->Arg(32)->Arg(256)->Name("matmul_tn/reference");
BENCHMARK(BM_MatmulTN<true>)->Arg(32)->Arg(256)->Name("matmul_tn/parallel");
BENCHMARK(BM_Attention<false>)->Arg(32)->Arg(256)->Name("attention/reference");
BENCHMARK(BM_Attention<true>)->Arg(32)->Arg(256)->Name("attention/parallel");

BENCHMARK_MAIN();
