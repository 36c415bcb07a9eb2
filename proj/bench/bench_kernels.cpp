// OpenMP kernels against the serial reference loops.
//
//   ./build/bench/divlab_bench --benchmark_filter=matmul
//   OMP_NUM_THREADS=4 ./build/bench/divlab_bench

#include <benchmark/benchmark.h>

#include <vector>

#include "divlab/kernels.hpp"
#include "divlab/model.hpp"
#include "divlab/util.hpp"

namespace {

using namespace divlab;

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(2.0 * uniform_unit(rng) - 1.0);
  return v;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1)), n = m;
  const auto a = random_values(static_cast<std::size_t>(m) * k, 1);
  const auto b = random_values(static_cast<std::size_t>(k) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::matmul<float>(a, b, c, m, k, n);
    } else {
      kernels::ref::matmul<float>(a, b, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(m) * k * n);
}

template <bool Parallel>
void BM_matmul_a_bt(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1)), n = m;
  const auto a = random_values(static_cast<std::size_t>(m) * k, 3);
  const auto b = random_values(static_cast<std::size_t>(n) * k, 4);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::matmul_a_bt<float>(a, b, c, m, k, n);
    } else {
      kernels::ref::matmul_a_bt<float>(a, b, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(m) * k * n);
}

template <bool Parallel>
void BM_matmul_at_b(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1)), n = m;
  const auto a = random_values(static_cast<std::size_t>(m) * k, 5);
  const auto b = random_values(static_cast<std::size_t>(m) * n, 6);
  std::vector<float> c(static_cast<std::size_t>(k) * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::matmul_at_b<float>(a, b, c, m, k, n);
    } else {
      kernels::ref::matmul_at_b<float>(a, b, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(m) * k * n);
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0)), cols = static_cast<int>(state.range(1));
  const auto x0 = random_values(static_cast<std::size_t>(rows) * cols, 7);
  std::vector<float> x = x0;
  for (auto _ : state) {
    x = x0;
    if constexpr (Parallel) {
      kernels::softmax_rows<float>(x, rows, cols);
    } else {
      kernels::ref::softmax_rows<float>(x, rows, cols);
    }
    benchmark::DoNotOptimize(x.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows) * cols);
}

template <bool Parallel>
void BM_normalize(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0)), cols = static_cast<int>(state.range(1));
  const auto x = random_values(static_cast<std::size_t>(rows) * cols, 8);
  std::vector<float> y(x.size()), inv(static_cast<std::size_t>(rows));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::normalize_rows<float>(x, y, inv, rows, cols, 1e-5f);
    } else {
      kernels::ref::normalize_rows<float>(x, y, inv, rows, cols, 1e-5f);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows) * cols);
}

// One forward/backward pass of the desk-size model on a token batch.
void BM_train_step(benchmark::State& state) {
  model::ModelConfig cfg;
  cfg.src_vocab = cfg.tgt_vocab = 400;
  const auto params = model::init_params(cfg, 1);
  Rng rng(9);
  std::vector<corpus::EncodedPair> pairs(static_cast<std::size_t>(state.range(0)));
  for (auto& e : pairs) {
    for (int i = 0; i < 16; ++i) {
      e.src_ids.push_back(6 + static_cast<int>(uniform_index(rng, 394)));
      e.tgt_ids.push_back(i == 15 ? corpus::BpeModel::kEos : 6 + static_cast<int>(uniform_index(rng, 394)));
    }
    e.src_factors.assign(16, corpus::Factor::EQ);
    e.tgt_factors.assign(16, corpus::Factor::EQ);
  }
  const auto batch = model::make_batch(pairs);
  for (auto _ : state) benchmark::DoNotOptimize(model::loss_and_grad(batch, params, 0.1, false).loss);
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Name("matmul/ref")->ArgsProduct({{32, 128, 256, 512}, {32, 64}});
BENCHMARK(BM_matmul<true>)->Name("matmul/omp")->ArgsProduct({{32, 128, 256, 512}, {32, 64}});
BENCHMARK(BM_matmul_a_bt<false>)->Name("matmul_a_bt/ref")->ArgsProduct({{32, 128, 256, 512}, {32, 64}});
BENCHMARK(BM_matmul_a_bt<true>)->Name("matmul_a_bt/omp")->ArgsProduct({{32, 128, 256, 512}, {32, 64}});
BENCHMARK(BM_matmul_at_b<false>)->Name("matmul_at_b/ref")->ArgsProduct({{32, 128, 256, 512}, {32, 64}});
BENCHMARK(BM_matmul_at_b<true>)->Name("matmul_at_b/omp")->ArgsProduct({{32, 128, 256, 512}, {32, 64}});
BENCHMARK(BM_softmax<false>)->Name("softmax/ref")->Args({64, 400})->Args({512, 400})->Args({4096, 32});
BENCHMARK(BM_softmax<true>)->Name("softmax/omp")->Args({64, 400})->Args({512, 400})->Args({4096, 32});
BENCHMARK(BM_normalize<false>)->Name("layernorm/ref")->Args({64, 32})->Args({512, 32})->Args({4096, 32});
BENCHMARK(BM_normalize<true>)->Name("layernorm/omp")->Args({64, 32})->Args({512, 32})->Args({4096, 32});
BENCHMARK(BM_train_step)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
