#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "cardlab/diffusion.hpp"
#include "cardlab/fokker_planck.hpp"
#include "cardlab/nn.hpp"
#include "cardlab/rng.hpp"
#include "cardlab/score_approx.hpp"
#include "cardlab/transport.hpp"

using namespace cardlab;

namespace {

EmpiricalMeasure cloud(std::size_t n, std::uint64_t seed, double shift) {
    Rng rng(seed);
    std::vector<double> pts(2 * n);
    for (auto& v : pts) v = rng.normal() + shift;
    return EmpiricalMeasure(2, std::move(pts));
}

void BM_W2Exact(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto A = cloud(n, 1, 0.0), B = cloud(n, 2, 0.5);
    for (auto _ : st) benchmark::DoNotOptimize(w2_exact(A, B).distance);
    st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_W2Exact)->RangeMultiplier(2)->Range(64, 512)->Complexity()->Unit(benchmark::kMillisecond);

void BM_W2Sinkhorn(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto A = cloud(n, 1, 0.0), B = cloud(n, 2, 0.5);
    const double reg = 0.05 * median_cost(A, B);
    for (auto _ : st) benchmark::DoNotOptimize(w2_sinkhorn(A, B, reg).distance);
}
BENCHMARK(BM_W2Sinkhorn)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

// The noise network shape: (y_t, f, one-hot) -> 128 -> 128 -> 2.
DenseNet eps_like_net() {
    return DenseNet({8, 128, 128, 2}, {Activation::Softplus, Activation::Softplus, Activation::Identity}, 7);
}

void BM_NetForward(benchmark::State& st) {
    const DenseNet net = eps_like_net();
    const std::vector<double> x(8, 0.3);
    for (auto _ : st) benchmark::DoNotOptimize(forward(net, x));
}
BENCHMARK(BM_NetForward);

void BM_NetForwardBackward(benchmark::State& st) {
    const DenseNet net = eps_like_net();
    const std::vector<double> x(8, 0.3), g{1.0, -1.0};
    ForwardCache cache;
    for (auto _ : st) {
        forward(net, x, &cache);
        benchmark::DoNotOptimize(backward(net, cache, g));
    }
}
BENCHMARK(BM_NetForwardBackward);

void BM_ApproxScore(benchmark::State& st) {
    const int N = static_cast<int>(st.range(0));
    const GaussianFamily fam(0.7071067811865476);
    const double f = 0.5;
    const auto dom = make_domains(fam, std::span(&f, 1), 1.0, 0.5, N, DomainOptions{});
    const auto poly = build_local_polynomial(fam, dom.R_star, N, 2);
    double y = 0.9;
    for (auto _ : st) benchmark::DoNotOptimize(approx_score(poly, fam, dom, std::span(&y, 1), std::span(&f, 1)));
}
BENCHMARK(BM_ApproxScore)->Arg(8)->Arg(32)->Arg(128);

void BM_FpForward(benchmark::State& st) {
    const auto ny = static_cast<std::size_t>(st.range(0));
    const double f = 0.5;
    const double dt = 0.5 * Grid1D::cfl_limit(f - 8, f + 8, ny, 1.0, f);
    const Grid1D g = Grid1D::make(f - 8, f + 8, ny, dt, 1.0, f);
    const DensityField q0 = project_density(g, [](double y) { return std::exp(-2.0 * (y - 0.5) * (y - 0.5)); });
    const BetaFn beta = [](double) { return 1.0; };
    for (auto _ : st) benchmark::DoNotOptimize(fp_forward_solve(g, q0, f, beta, 1.0).steps);
}
BENCHMARK(BM_FpForward)->Arg(200)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
