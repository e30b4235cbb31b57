// Reference (serial loops) vs fast (Eigen + OpenMP) kernels at model shapes.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "hgn/kernels.hpp"

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Graph aggregation A (N x N) times features (B x N x D): batch B, broadcast A.
template <bool Reference>
void BM_AggregateBatched(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto d = static_cast<std::size_t>(state.range(2));
    const auto a = random_buffer(n * n, 1);
    const auto x = random_buffer(batch * n * d, 2);
    std::vector<double> y(batch * n * d);
    for (auto _ : state) {
        if constexpr (Reference) {
            hgn::kernels::reference::gemm_batched(batch, false, false, n, d, n, a.data(), 0, x.data(), n * d,
                                                  y.data(), n * d, false);
        } else {
            hgn::kernels::gemm_batched(batch, false, false, n, d, n, a.data(), 0, x.data(), n * d, y.data(), n * d,
                                       false);
        }
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * batch * n * n * d));
}

// Channel transform X (B*N x D) times W^T (D x D).
template <bool Reference>
void BM_ChannelGemm(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto d = static_cast<std::size_t>(state.range(1));
    const auto x = random_buffer(rows * d, 3);
    const auto w = random_buffer(d * d, 4);
    std::vector<double> y(rows * d);
    for (auto _ : state) {
        if constexpr (Reference) {
            hgn::kernels::reference::gemm(false, true, rows, d, d, x.data(), w.data(), y.data(), false);
        } else {
            hgn::kernels::gemm(false, true, rows, d, d, x.data(), w.data(), y.data(), false);
        }
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * rows * d * d));
}

// Non-local attention rows: B blocks of N x N.
template <bool Reference>
void BM_Softmax(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto in = random_buffer(batch * n * n, 5);
    std::vector<double> out(in.size());
    for (auto _ : state) {
        if constexpr (Reference) {
            hgn::kernels::reference::softmax_rows(batch * n, n, in.data(), nullptr, n, out.data());
        } else {
            hgn::kernels::softmax_rows(batch * n, n, in.data(), nullptr, n, out.data());
        }
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch * n * n));
}

}  // namespace

BENCHMARK_TEMPLATE(BM_AggregateBatched, true)->Name("aggregate/reference")->Args({64, 17, 128})->Args({64, 92, 128});
BENCHMARK_TEMPLATE(BM_AggregateBatched, false)->Name("aggregate/parallel")->Args({64, 17, 128})->Args({64, 92, 128});
BENCHMARK_TEMPLATE(BM_ChannelGemm, true)->Name("channel_gemm/reference")->Args({64 * 17, 128})->Args({64 * 92, 128});
BENCHMARK_TEMPLATE(BM_ChannelGemm, false)->Name("channel_gemm/parallel")->Args({64 * 17, 128})->Args({64 * 92, 128});
BENCHMARK_TEMPLATE(BM_Softmax, true)->Name("softmax/reference")->Args({64, 17})->Args({64, 92});
BENCHMARK_TEMPLATE(BM_Softmax, false)->Name("softmax/parallel")->Args({64, 17})->Args({64, 92});

BENCHMARK_MAIN();
