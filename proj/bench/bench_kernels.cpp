// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mapo/kernels.hpp"

namespace {

using mapo::kernels::ConvDims;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(g);
  return v;
}

ConvDims dims(const benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  return {channels, side, side, channels, 3, 3};
}

template <auto Kernel>
void conv_forward(benchmark::State& state) {
  const auto d = dims(state);
  const auto in = random_values(d.input_size(), 1), k = random_values(d.kernel_size(), 2);
  std::vector<double> out(d.output_size());
  for (auto _ : state) {
    Kernel(d, in, k, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.output_size() * d.channels * 9));
}

template <auto Kernel>
void conv_backward_input(benchmark::State& state) {
  const auto d = dims(state);
  const auto go = random_values(d.output_size(), 1), k = random_values(d.kernel_size(), 2);
  std::vector<double> gi(d.input_size());
  for (auto _ : state) {
    Kernel(d, go, k, gi);
    benchmark::DoNotOptimize(gi.data());
  }
}

template <auto Kernel>
void conv_backward_kernel(benchmark::State& state) {
  const auto d = dims(state);
  const auto go = random_values(d.output_size(), 1), in = random_values(d.input_size(), 2);
  std::vector<double> gk(d.kernel_size());
  for (auto _ : state) {
    Kernel(d, go, in, gk);
    benchmark::DoNotOptimize(gk.data());
  }
}

template <auto Kernel>
void distance_transform(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 g(3);
  std::bernoulli_distribution b(0.05);
  std::vector<unsigned char> feature(side * side);
  for (auto& f : feature) f = b(g);
  std::vector<double> out(side * side);
  for (auto _ : state) {
    Kernel(side, side, feature, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}

void conv_args(benchmark::internal::Benchmark* b) {
  for (long side : {32, 64, 128})
    for (long ch : {4, 16}) b->Args({side, ch});
}

namespace ser = mapo::kernels::serial;
namespace par = mapo::kernels::parallel;

BENCHMARK(conv_forward<ser::conv2d_forward>)->Name("conv2d_forward/serial")->Apply(conv_args);
BENCHMARK(conv_forward<par::conv2d_forward>)->Name("conv2d_forward/parallel")->Apply(conv_args)->UseRealTime();
BENCHMARK(conv_backward_input<ser::conv2d_backward_input>)->Name("conv2d_backward_input/serial")->Apply(conv_args);
BENCHMARK(conv_backward_input<par::conv2d_backward_input>)
    ->Name("conv2d_backward_input/parallel")
    ->Apply(conv_args)
    ->UseRealTime();
BENCHMARK(conv_backward_kernel<ser::conv2d_backward_kernel>)->Name("conv2d_backward_kernel/serial")->Apply(conv_args);
BENCHMARK(conv_backward_kernel<par::conv2d_backward_kernel>)
    ->Name("conv2d_backward_kernel/parallel")
    ->Apply(conv_args)
    ->UseRealTime();
BENCHMARK(distance_transform<ser::squared_distance_transform>)->Name("distance_transform/serial")->Arg(64)->Arg(256);
BENCHMARK(distance_transform<par::squared_distance_transform>)
    ->Name("distance_transform/parallel")
    ->Arg(64)
    ->Arg(256)
    ->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
