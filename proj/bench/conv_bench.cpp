#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "chanprune/kernels.hpp"

namespace {

using chanprune::kernels::ConvShape;

struct Fixture {
  ConvShape s;
  std::vector<double> in, weight, bias, out;

  Fixture(std::size_t batch, std::size_t channels, std::size_t size) {
    s.batch = batch;
    s.in_channels = channels;
    s.out_channels = channels;
    s.in_height = s.in_width = size;
    s.kernel = 3;
    s.padding = 1;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> d;
    in.resize(s.input_size());
    weight.resize(s.weight_size());
    bias.assign(s.out_channels, 0.1);
    out.resize(s.output_size());
    for (auto& v : in) v = d(rng);
    for (auto& v : weight) v = d(rng);
  }
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  Fixture f(8, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    if constexpr (Parallel)
      chanprune::kernels::parallel::conv2d_forward(f.s, f.in, f.weight, f.bias, f.out);
    else
      chanprune::kernels::reference::conv2d_forward(f.s, f.in, f.weight, f.bias, f.out);
    benchmark::DoNotOptimize(f.out.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(f.s.weight_size() * f.s.out_height() * f.s.out_width() * f.s.batch),
      benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  Fixture f(8, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  std::vector<double> dw(f.weight.size()), din(f.in.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      chanprune::kernels::parallel::conv2d_backward_weight(f.s, f.in, f.out, dw);
      chanprune::kernels::parallel::conv2d_backward_input(f.s, f.weight, f.out, din);
    } else {
      chanprune::kernels::reference::conv2d_backward_weight(f.s, f.in, f.out, dw);
      chanprune::kernels::reference::conv2d_backward_input(f.s, f.weight, f.out, din);
    }
    benchmark::DoNotOptimize(dw.data());
    benchmark::DoNotOptimize(din.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Args({16, 32})->Args({64, 8});
BENCHMARK(BM_ConvForward<true>)->Args({16, 32})->Args({64, 8});
BENCHMARK(BM_ConvBackward<false>)->Args({16, 32})->Args({64, 8});
BENCHMARK(BM_ConvBackward<true>)->Args({16, 32})->Args({64, 8});

BENCHMARK_MAIN();
