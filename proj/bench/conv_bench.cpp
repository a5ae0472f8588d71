// Serial reference kernels vs the OpenMP im2col+GEMM kernels on the layer
// shapes used by the toy and full-size models.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "latseg/kernels.hpp"

namespace {

using latseg::kernels::ConvGeometry;

ConvGeometry geometry_from(const benchmark::State& state) {
  ConvGeometry g;
  g.batch = static_cast<int>(state.range(0));
  g.in_channels = g.out_channels = static_cast<int>(state.range(1));
  g.height = g.width = static_cast<int>(state.range(2));
  g.kernel = 3;
  g.stride = 1;
  g.pad = 1;
  return g;
}

std::vector<float> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

struct Buffers {
  std::vector<float> x, w, b, y;
  explicit Buffers(const ConvGeometry& g)
      : x(random_buffer(std::size_t(g.batch) * g.in_channels * g.height * g.width, 1)),
        w(random_buffer(std::size_t(g.out_channels) * g.in_channels * 9, 2)),
        b(random_buffer(g.out_channels, 3)),
        y(std::size_t(g.batch) * g.out_channels * g.out_height() * g.out_width()) {}
};

void set_flops(benchmark::State& state, const ConvGeometry& g) {
  const double macs = double(g.batch) * g.out_channels * g.out_height() * g.out_width() * g.in_channels * 9;
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * macs * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}

void BM_ConvForwardReference(benchmark::State& state) {
  const auto g = geometry_from(state);
  Buffers buf(g);
  for (auto _ : state) {
    latseg::kernels::reference::conv2d_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
    benchmark::DoNotOptimize(buf.y.data());
  }
  set_flops(state, g);
}

void BM_ConvForwardParallel(benchmark::State& state) {
  const auto g = geometry_from(state);
  Buffers buf(g);
  for (auto _ : state) {
    latseg::kernels::conv2d_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
    benchmark::DoNotOptimize(buf.y.data());
  }
  set_flops(state, g);
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto g = geometry_from(state);
  Buffers buf(g);
  std::vector<float> gx(buf.x.size()), gw(buf.w.size()), gb(buf.b.size());
  for (auto _ : state) {
    latseg::kernels::reference::conv2d_backward_input(g, buf.y.data(), buf.w.data(), gx.data());
    latseg::kernels::reference::conv2d_backward_params(g, buf.x.data(), buf.y.data(), gw.data(), gb.data());
    benchmark::DoNotOptimize(gx.data());
  }
  set_flops(state, g);
}

void BM_ConvBackwardParallel(benchmark::State& state) {
  const auto g = geometry_from(state);
  Buffers buf(g);
  std::vector<float> gx(buf.x.size()), gw(buf.w.size()), gb(buf.b.size());
  for (auto _ : state) {
    latseg::kernels::conv2d_backward_input(g, buf.y.data(), buf.w.data(), gx.data());
    latseg::kernels::conv2d_backward_params(g, buf.x.data(), buf.y.data(), gw.data(), gb.data());
    benchmark::DoNotOptimize(gx.data());
  }
  set_flops(state, g);
}

// {batch, channels, spatial}
#define LATSEG_CONV_ARGS \
  Args({8, 16, 64})->Args({8, 32, 16})->Args({5, 64, 16})->Args({1, 128, 32})->Unit(benchmark::kMillisecond)

BENCHMARK(BM_ConvForwardReference)->LATSEG_CONV_ARGS;
BENCHMARK(BM_ConvForwardParallel)->LATSEG_CONV_ARGS;
BENCHMARK(BM_ConvBackwardReference)->LATSEG_CONV_ARGS;
BENCHMARK(BM_ConvBackwardParallel)->LATSEG_CONV_ARGS;

}  // namespace

BENCHMARK_MAIN();
