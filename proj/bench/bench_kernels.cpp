// Serial reference kernels against their OpenMP counterparts on shapes taken
// from the reference model (20 inputs of 72 x 401, 32 channels).

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "livesong/kernels.h"

namespace ks = livesong::kernels::serial;
namespace kp = livesong::kernels::parallel;
using livesong::kernels::ConvShape;
using livesong::kernels::Index;
using livesong::kernels::PoolShape;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

ConvShape conv_shape(int in_channels) {
  ConvShape s;
  s.batch = 20;
  s.in_channels = in_channels;
  s.in_h = 72;
  s.in_w = 401;
  s.out_channels = 32;
  s.kernel_h = 3;
  s.kernel_w = 3;
  s.pad_h = 1;
  s.pad_w = 1;
  return s;
}

struct ConvData {
  explicit ConvData(const ConvShape& s)
      : input(random_vector(std::size_t(s.batch) * s.in_channels * s.in_h * s.in_w, 1)),
        weight(random_vector(std::size_t(s.out_channels) * s.in_channels * s.kernel_h * s.kernel_w, 2)),
        bias(random_vector(s.out_channels, 3)),
        output(std::size_t(s.batch) * s.out_channels * s.out_h() * s.out_w()),
        grad_output(random_vector(output.size(), 4)),
        grad_input(input.size()),
        grad_weight(weight.size()),
        grad_bias(bias.size()) {}
  std::vector<float> input, weight, bias, output, grad_output, grad_input, grad_weight, grad_bias;
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto s = conv_shape(static_cast<int>(state.range(0)));
  ConvData d(s);
  for (auto _ : state) {
    if constexpr (Parallel)
      kp::conv2d_forward(s, d.input.data(), d.weight.data(), d.bias.data(), d.output.data());
    else
      ks::conv2d_forward(s, d.input.data(), d.weight.data(), d.bias.data(), d.output.data());
    benchmark::DoNotOptimize(d.output.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto s = conv_shape(static_cast<int>(state.range(0)));
  ConvData d(s);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kp::conv2d_backward_input(s, d.grad_output.data(), d.weight.data(), d.grad_input.data());
      kp::conv2d_backward_params(s, d.input.data(), d.grad_output.data(), d.grad_weight.data(), d.grad_bias.data());
    } else {
      ks::conv2d_backward_input(s, d.grad_output.data(), d.weight.data(), d.grad_input.data());
      ks::conv2d_backward_params(s, d.input.data(), d.grad_output.data(), d.grad_weight.data(), d.grad_bias.data());
    }
    benchmark::DoNotOptimize(d.grad_input.data());
  }
}

template <bool Parallel>
void BM_MaxPool(benchmark::State& state) {
  PoolShape s;
  s.batch = 20;
  s.channels = 32;
  s.in_h = 72;
  s.in_w = 401;
  s.pool_h = 2;
  s.pool_w = 2;
  const auto input = random_vector(std::size_t(s.batch) * s.channels * s.in_h * s.in_w, 5);
  const std::size_t out_n = std::size_t(s.batch) * s.channels * s.out_h() * s.out_w();
  std::vector<float> output(out_n), grad_input(input.size());
  std::vector<Index> argmax(out_n);
  const auto grad_output = random_vector(out_n, 6);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kp::maxpool2d_forward(s, input.data(), output.data(), argmax.data());
      kp::maxpool2d_backward(s, grad_output.data(), argmax.data(), grad_input.data());
    } else {
      ks::maxpool2d_forward(s, input.data(), output.data(), argmax.data());
      ks::maxpool2d_backward(s, grad_output.data(), argmax.data(), grad_input.data());
    }
    benchmark::DoNotOptimize(grad_input.data());
  }
}

template <bool Parallel>
void BM_Csm(benchmark::State& state) {
  const int batch = 10, channels = 32;
  const int len = static_cast<int>(state.range(0));
  const auto a = random_vector(std::size_t(batch) * channels * len, 7);
  const auto b = random_vector(a.size(), 8);
  const std::size_t out_n = std::size_t(batch) * len * len;
  std::vector<float> out(out_n), grad_a(a.size()), grad_b(b.size());
  const auto grad_out = random_vector(out_n, 9);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kp::csm_forward(batch, channels, len, len, a.data(), b.data(), out.data());
      kp::csm_backward(batch, channels, len, len, a.data(), b.data(), grad_out.data(), grad_a.data(), grad_b.data());
    } else {
      ks::csm_forward(batch, channels, len, len, a.data(), b.data(), out.data());
      ks::csm_backward(batch, channels, len, len, a.data(), b.data(), grad_out.data(), grad_a.data(), grad_b.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool<false>)->Name("maxpool/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool<true>)->Name("maxpool/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Csm<false>)->Name("csm/serial")->Arg(37)->Arg(194)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Csm<true>)->Name("csm/parallel")->Arg(37)->Arg(194)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
