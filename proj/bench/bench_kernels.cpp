// Serial reference kernels against the OpenMP versions on desk-CNN shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "cbn/kernels.hpp"
#include "cbn/rng.hpp"

namespace k = cbn::kernels;

namespace {

k::ConvDims dims(benchmark::State& state) {
  k::ConvDims d;
  d.batch = std::size_t(state.range(0));
  d.in_channels = std::size_t(state.range(1));
  d.out_channels = std::size_t(state.range(2));
  d.in_h = d.in_w = std::size_t(state.range(3));
  d.kernel_h = d.kernel_w = 3;
  d.padding = 1;
  return d;
}

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  cbn::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <auto Fn>
void forward(benchmark::State& state) {
  const auto d = dims(state);
  const auto x = filled(d.input_size(), 1), w = filled(d.weight_size(), 2);
  std::vector<double> y(d.output_size());
  for (auto _ : state) {
    Fn(d, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void backward_input(benchmark::State& state) {
  const auto d = dims(state);
  const auto g = filled(d.output_size(), 1), w = filled(d.weight_size(), 2);
  std::vector<double> gx(d.input_size());
  for (auto _ : state) {
    Fn(d, g, w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
}

template <auto Fn>
void backward_weight(benchmark::State& state) {
  const auto d = dims(state);
  const auto x = filled(d.input_size(), 1), g = filled(d.output_size(), 2);
  std::vector<double> gw(d.weight_size());
  for (auto _ : state) {
    Fn(d, x, g, gw);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Fn>
void patch_mean(benchmark::State& state) {
  const auto d = dims(state);
  const auto x = filled(d.input_size(), 1);
  std::vector<double> out(d.in_channels * 9);
  for (auto _ : state) {
    Fn(d, x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// batch, in, out, spatial
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({2, 1, 16, 14})->Args({2, 16, 32, 7})->Args({16, 16, 32, 7})->Args({100, 32, 32, 7});
}

}  // namespace

BENCHMARK(forward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(shapes);
BENCHMARK(forward<k::conv2d_forward>)->Name("conv_forward/omp")->Apply(shapes);
BENCHMARK(backward_input<k::serial::conv2d_backward_input>)->Name("conv_backward_input/serial")->Apply(shapes);
BENCHMARK(backward_input<k::conv2d_backward_input>)->Name("conv_backward_input/omp")->Apply(shapes);
BENCHMARK(backward_weight<k::serial::conv2d_backward_weight>)->Name("conv_backward_weight/serial")->Apply(shapes);
BENCHMARK(backward_weight<k::conv2d_backward_weight>)->Name("conv_backward_weight/omp")->Apply(shapes);
BENCHMARK(patch_mean<k::serial::conv2d_patch_mean>)->Name("patch_mean/serial")->Apply(shapes);
BENCHMARK(patch_mean<k::conv2d_patch_mean>)->Name("patch_mean/omp")->Apply(shapes);

BENCHMARK_MAIN();
