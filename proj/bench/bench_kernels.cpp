// Parallel kernels vs the serial reference implementation.
//
//   RCNET_THREADS=4 ./rcnet_bench --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rcnet/kernels.hpp"
#include "rcnet/parallel.hpp"
#include "rcnet/reference.hpp"

namespace {

using rcnet::Index;

std::vector<float> random_buffer(Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(0.f, 1.f);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = dist(rng);
  return v;
}

// args: batch, channels, spatial extent
rcnet::kernels::ConvGeometry geometry(const benchmark::State& state) {
  const Index n = state.range(0);
  const Index c = state.range(1);
  const Index hw = state.range(2);
  return rcnet::kernels::make_conv_geometry({n, c, hw, hw}, {c, c, 3, 3}, 1, 1);
}

void set_conv_counters(benchmark::State& state, const rcnet::kernels::ConvGeometry& g) {
  const double macs = static_cast<double>(g.batch * g.out_plane() * g.out_channels * g.patch_size());
  state.counters["GMAC/s"] = benchmark::Counter(macs * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = random_buffer(g.batch * g.in_channels * g.in_plane(), 1);
  const auto w = random_buffer(g.out_channels * g.patch_size(), 2);
  std::vector<float> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_plane()));
  for (auto _ : state) {
    if constexpr (Reference) {
      rcnet::reference::conv2d_forward(g, in.data(), w.data(), static_cast<const float*>(nullptr), out.data());
    } else {
      rcnet::kernels::conv2d_forward(g, in.data(), w.data(), static_cast<const float*>(nullptr), out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
  set_conv_counters(state, g);
}

template <bool Reference>
void BM_ConvBackwardWeight(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = random_buffer(g.batch * g.in_channels * g.in_plane(), 1);
  const auto dy = random_buffer(g.batch * g.out_channels * g.out_plane(), 3);
  std::vector<float> dw(static_cast<std::size_t>(g.out_channels * g.patch_size()));
  for (auto _ : state) {
    if constexpr (Reference) {
      rcnet::reference::conv2d_backward_weight(g, in.data(), dy.data(), dw.data());
    } else {
      rcnet::kernels::conv2d_backward_weight(g, in.data(), dy.data(), dw.data());
    }
    benchmark::DoNotOptimize(dw.data());
  }
  set_conv_counters(state, g);
}

template <bool Reference>
void BM_ConvBackwardInput(benchmark::State& state) {
  const auto g = geometry(state);
  const auto w = random_buffer(g.out_channels * g.patch_size(), 2);
  const auto dy = random_buffer(g.batch * g.out_channels * g.out_plane(), 3);
  std::vector<float> dx(static_cast<std::size_t>(g.batch * g.in_channels * g.in_plane()));
  for (auto _ : state) {
    if constexpr (Reference) {
      rcnet::reference::conv2d_backward_input(g, w.data(), dy.data(), dx.data());
    } else {
      rcnet::kernels::conv2d_backward_input(g, w.data(), dy.data(), dx.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
  set_conv_counters(state, g);
}

template <bool Reference>
void BM_ChannelMoments(benchmark::State& state) {
  const Index n = state.range(0);
  const Index c = state.range(1);
  const Index plane = state.range(2) * state.range(2);
  const auto x = random_buffer(n * c * plane, 4);
  std::vector<double> mean(static_cast<std::size_t>(c));
  std::vector<double> var(static_cast<std::size_t>(c));
  for (auto _ : state) {
    if constexpr (Reference) {
      rcnet::reference::channel_moments(x.data(), n, c, plane, mean.data(), var.data());
    } else {
      rcnet::kernels::channel_moments(x.data(), n, c, plane, mean.data(), var.data());
    }
    benchmark::DoNotOptimize(var.data());
  }
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 16, 16})->Args({32, 64, 16})->Args({32, 64, 32})->Args({32, 256, 4});
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("ConvForward/parallel")->Apply(conv_shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("ConvForward/reference")->Apply(conv_shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardWeight<false>)
    ->Name("ConvBackwardWeight/parallel")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardWeight<true>)
    ->Name("ConvBackwardWeight/reference")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardInput<false>)
    ->Name("ConvBackwardInput/parallel")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardInput<true>)
    ->Name("ConvBackwardInput/reference")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ChannelMoments<false>)->Name("ChannelMoments/parallel")->Args({64, 64, 16});
BENCHMARK(BM_ChannelMoments<true>)->Name("ChannelMoments/reference")->Args({64, 64, 16});

int main(int argc, char** argv) {
  rcnet::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
