// Serial reference kernels against the OpenMP ones, plus a traced forward
// pass. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>

#include "guide/kernels.hpp"
#include "guide/model.hpp"

using namespace guide;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 64, 1);
  const Matrix b = random_matrix(64, 256, 2);
  for (auto _ : state) {
    Matrix c = Parallel ? kernels::matmul(a, b) : kernels::serial::matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <bool Parallel>
void BM_RmsNorm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(n, 64, 3);
  const std::vector<double> gain(64, 1.0);
  for (auto _ : state) {
    Matrix y = Parallel ? kernels::rms_norm(x, gain) : kernels::serial::rms_norm(x, gain);
    benchmark::DoNotOptimize(y.values().data());
  }
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const kernels::AttentionShape shape{4, 16};
  const Matrix q = random_matrix(s, 64, 4);
  const Matrix k = random_matrix(s, 64, 5);
  const Matrix v = random_matrix(s, 64, 6);
  std::vector<double> bias(s, 0.0);
  for (std::size_t i = 0; i < s / 8; ++i) bias[i] = 2.0;
  const kernels::AttentionBias ab{bias, {}};
  Matrix context(s, 64);
  std::vector<Matrix> probs;
  for (auto _ : state) {
    if (Parallel) {
      kernels::causal_attention(q, k, v, 0, shape, ab, context, &probs);
    } else {
      kernels::serial::causal_attention(q, k, v, 0, shape, ab, context, &probs);
    }
    benchmark::DoNotOptimize(context.values().data());
  }
}

void BM_ForwardTraced(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const Weights w = init_model(ModelConfig{});
  std::vector<TokenId> tokens(s);
  for (std::size_t i = 0; i < s; ++i) tokens[i] = static_cast<TokenId>(97 + i % 26);
  const BiasSpec bias{{{TokenRange{0, s / 8}, 2.0}}};
  for (auto _ : state) {
    auto r = forward(w, tokens, bias, CaptureOptions{true, false});
    benchmark::DoNotOptimize(r.logits.values().data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Matmul<true>)->Name("matmul/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_RmsNorm<false>)->Name("rms_norm/serial")->Arg(1024);
BENCHMARK(BM_RmsNorm<true>)->Name("rms_norm/omp")->Arg(1024);
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Attention<true>)->Name("attention/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_ForwardTraced)->Name("forward_traced")->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
