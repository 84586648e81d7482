// Compares the serial reference kernels against the OpenMP implementations
// on model-realistic shapes, plus whole-model forward/backward per tier.
// Run: ./kernel_bench [--benchmark_filter=...]

#include <benchmark/benchmark.h>

#include <vector>

#include "monetlab/kernels.hpp"
#include "monetlab/model.hpp"
#include "monetlab/rng.hpp"

using namespace monetlab;
namespace K = monetlab::kernels;

namespace {

struct ConvShape {
    int ci, co, h, w, stride;
};

const ConvShape kShapes[] = {
    {16, 16, 64, 64, 1},   // full-res block
    {32, 32, 32, 32, 1},   // mid block
    {64, 64, 16, 16, 1},   // bottleneck block
    {16, 32, 64, 64, 2},   // downsample
};

std::vector<float> randomized(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.normal());
    return v;
}

void conv_args(benchmark::internal::Benchmark* b) {
    for (int i = 0; i < int(std::size(kShapes)); ++i) b->Arg(i);
}

void BM_conv3x3_fwd_ref(benchmark::State& state) {
    const ConvShape s = kShapes[state.range(0)];
    auto in = randomized(size_t(s.ci) * s.h * s.w, 1);
    auto wt = randomized(size_t(s.co) * s.ci * 9, 2);
    auto bias = randomized(size_t(s.co), 3);
    std::vector<float> out(size_t(s.co) * (s.h / s.stride) * (s.w / s.stride));
    for (auto _ : state) {
        K::ref::conv3x3_fwd(in.data(), s.ci, s.h, s.w, wt.data(), bias.data(), out.data(), s.co,
                            s.stride);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * 2 * s.co * s.ci * 9 *
                            (s.h / s.stride) * (s.w / s.stride));
}
BENCHMARK(BM_conv3x3_fwd_ref)->Apply(conv_args);

void BM_conv3x3_fwd_omp(benchmark::State& state) {
    const ConvShape s = kShapes[state.range(0)];
    auto in = randomized(size_t(s.ci) * s.h * s.w, 1);
    auto wt = randomized(size_t(s.co) * s.ci * 9, 2);
    auto bias = randomized(size_t(s.co), 3);
    std::vector<float> out(size_t(s.co) * (s.h / s.stride) * (s.w / s.stride));
    for (auto _ : state) {
        K::conv3x3_fwd(in.data(), s.ci, s.h, s.w, wt.data(), bias.data(), out.data(), s.co,
                       s.stride);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * 2 * s.co * s.ci * 9 *
                            (s.h / s.stride) * (s.w / s.stride));
}
BENCHMARK(BM_conv3x3_fwd_omp)->Apply(conv_args);

void BM_conv3x3_bwd_wb_ref(benchmark::State& state) {
    const ConvShape s = kShapes[state.range(0)];
    auto gout = randomized(size_t(s.co) * (s.h / s.stride) * (s.w / s.stride), 4);
    auto in = randomized(size_t(s.ci) * s.h * s.w, 5);
    std::vector<float> gw(size_t(s.co) * s.ci * 9), gb(size_t(s.co));
    for (auto _ : state) {
        K::ref::conv3x3_bwd_wb(gout.data(), s.co, in.data(), s.ci, s.h, s.w, gw.data(), gb.data(),
                               s.stride);
        benchmark::DoNotOptimize(gw.data());
    }
}
BENCHMARK(BM_conv3x3_bwd_wb_ref)->Apply(conv_args);

void BM_conv3x3_bwd_wb_omp(benchmark::State& state) {
    const ConvShape s = kShapes[state.range(0)];
    auto gout = randomized(size_t(s.co) * (s.h / s.stride) * (s.w / s.stride), 4);
    auto in = randomized(size_t(s.ci) * s.h * s.w, 5);
    std::vector<float> gw(size_t(s.co) * s.ci * 9), gb(size_t(s.co));
    for (auto _ : state) {
        K::conv3x3_bwd_wb(gout.data(), s.co, in.data(), s.ci, s.h, s.w, gw.data(), gb.data(),
                          s.stride);
        benchmark::DoNotOptimize(gw.data());
    }
}
BENCHMARK(BM_conv3x3_bwd_wb_omp)->Apply(conv_args);

void BM_groupnorm_ref(benchmark::State& state) {
    const int c = 64, n = 1024, g = 8;
    auto x = randomized(size_t(c) * n, 6);
    auto gamma = randomized(size_t(c), 7);
    auto beta = randomized(size_t(c), 8);
    std::vector<float> y(size_t(c) * n), m(g), s(g);
    for (auto _ : state) {
        K::ref::groupnorm_fwd(x.data(), c, n, g, 1e-5f, gamma.data(), beta.data(), y.data(),
                              m.data(), s.data());
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_groupnorm_ref);

void BM_groupnorm_omp(benchmark::State& state) {
    const int c = 64, n = 1024, g = 8;
    auto x = randomized(size_t(c) * n, 6);
    auto gamma = randomized(size_t(c), 7);
    auto beta = randomized(size_t(c), 8);
    std::vector<float> y(size_t(c) * n), m(g), s(g);
    for (auto _ : state) {
        K::groupnorm_fwd(x.data(), c, n, g, 1e-5f, gamma.data(), beta.data(), y.data(), m.data(),
                         s.data());
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_groupnorm_omp);

void BM_gemm_tn_ref(benchmark::State& state) {
    const int n = 256, d = 16;
    auto a = randomized(size_t(d) * n, 9);
    auto b = randomized(size_t(d) * n, 10);
    std::vector<float> c(size_t(n) * n);
    for (auto _ : state) {
        K::ref::gemm_tn(a.data(), b.data(), c.data(), n, n, d);
        benchmark::DoNotOptimize(c.data());
    }
}
BENCHMARK(BM_gemm_tn_ref);

void BM_gemm_tn_omp(benchmark::State& state) {
    const int n = 256, d = 16;
    auto a = randomized(size_t(d) * n, 9);
    auto b = randomized(size_t(d) * n, 10);
    std::vector<float> c(size_t(n) * n);
    for (auto _ : state) {
        K::gemm_tn(a.data(), b.data(), c.data(), n, n, d);
        benchmark::DoNotOptimize(c.data());
    }
}
BENCHMARK(BM_gemm_tn_omp);

void BM_model_forward(benchmark::State& state) {
    const char tier = "SML"[state.range(0)];
    auto cfg = model::ModelConfig::for_tier(tier);
    model::UNet net(cfg);
    auto params = model::init_params(cfg, 1);
    const int hw = 64;
    auto input = randomized(12 * hw * hw, 11);
    std::vector<float> out(5 * hw * hw);
    model::Workspace<float> ws;
    net.alloc_workspace(ws, hw, hw);
    for (auto _ : state) {
        net.forward(params.data(), input.data(), 0.5f, ws, out.data());
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_model_forward)->Arg(0)->Arg(1)->Arg(2);

void BM_model_backward(benchmark::State& state) {
    const char tier = "SML"[state.range(0)];
    auto cfg = model::ModelConfig::for_tier(tier);
    model::UNet net(cfg);
    auto params = model::init_params(cfg, 1);
    const int hw = 64;
    auto input = randomized(12 * hw * hw, 11);
    auto gout = randomized(5 * hw * hw, 12);
    std::vector<float> out(5 * hw * hw), grads(net.param_count());
    model::Workspace<float> ws;
    net.alloc_workspace(ws, hw, hw);
    net.forward(params.data(), input.data(), 0.5f, ws, out.data());
    for (auto _ : state) {
        std::fill(grads.begin(), grads.end(), 0.f);
        net.backward(params.data(), ws, gout.data(), grads.data());
        benchmark::DoNotOptimize(grads.data());
    }
}
BENCHMARK(BM_model_backward)->Arg(0)->Arg(1)->Arg(2);

}  // namespace

BENCHMARK_MAIN();
