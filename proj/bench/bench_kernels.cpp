// Serial vs OpenMP kernels: matrix products and batched Viterbi decoding.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mmib/decoders.hpp"
#include "mmib/kernels.hpp"

using namespace mmib;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.values()) x = u(rng);
  return m;
}

template <void (*Fn)(const Matrix&, const Matrix&, Matrix&, kernels::Accumulate)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1);
  const Matrix b = random_matrix(n, n, 2);
  Matrix out(n, n);
  for (auto _ : state) {
    Fn(a, b, out, kernels::Accumulate::kOverwrite);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

using Batch = std::vector<std::vector<int>> (*)(std::span<const Matrix>, const Matrix&);

template <Batch Fn>
void bm_viterbi(benchmark::State& state) {
  const auto sentences = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t kLabels = 9, kLen = 64;
  std::vector<Matrix> emissions;
  for (std::size_t i = 0; i < sentences; ++i) emissions.push_back(random_matrix(kLen, kLabels, 10 + i));
  const Matrix transitions = random_matrix(kLabels + 2, kLabels + 2, 3);
  for (auto _ : state) {
    auto paths = Fn(emissions, transitions);
    benchmark::DoNotOptimize(paths.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * sentences));
}

}  // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul<kernels::omp::matmul>)->Name("matmul/omp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul<kernels::serial::matmul_tn>)->Name("matmul_tn/serial")->Arg(128);
BENCHMARK(bm_matmul<kernels::omp::matmul_tn>)->Name("matmul_tn/omp")->Arg(128);
BENCHMARK(bm_viterbi<decode::serial::viterbi_batch>)->Name("viterbi_batch/serial")->Arg(8)->Arg(64);
BENCHMARK(bm_viterbi<decode::omp::viterbi_batch>)->Name("viterbi_batch/omp")->Arg(8)->Arg(64);

BENCHMARK_MAIN();
