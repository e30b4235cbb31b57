#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "hgn/kernels.hpp"

using namespace hgn;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST_CASE("gemm matches the reference loop nest for every transpose combination") {
    std::mt19937_64 rng(1);
    const std::size_t m = 7, n = 5, k = 11;
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            for (bool acc : {false, true}) {
                auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
                auto c0 = random_vec(m * n, rng);
                auto c1 = c0;
                kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), c0.data(), acc);
                kernels::reference::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
                CHECK(max_diff(c0, c1) < 1e-13);
            }
        }
    }
}

TEST_CASE("gemm_batched with broadcast operands matches the reference") {
    std::mt19937_64 rng(2);
    const std::size_t batch = 6, m = 9, n = 4, k = 8;
    auto a = random_vec(batch * m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c0(batch * m * n), c1(batch * m * n);
    kernels::gemm_batched(batch, false, true, m, n, k, a.data(), m * k, b.data(), 0, c0.data(),
                          m * n, false);
    kernels::reference::gemm_batched(batch, false, true, m, n, k, a.data(), m * k, b.data(), 0,
                                     c1.data(), m * n, false);
    CHECK(max_diff(c0, c1) < 1e-13);
}

TEST_CASE("parallel kernels are bit-identical for any thread count") {
    std::mt19937_64 rng(3);
    const std::size_t batch = 16, m = 17, n = 32, k = 32;
    auto a = random_vec(batch * m * k, rng), b = random_vec(batch * k * n, rng);
    std::vector<double> c1(batch * m * n), c4(batch * m * n);
    const int saved = kernels::max_threads();
    kernels::set_max_threads(1);
    kernels::gemm_batched(batch, false, false, m, n, k, a.data(), m * k, b.data(), k * n,
                          c1.data(), m * n, false);
    kernels::set_max_threads(4);
    kernels::gemm_batched(batch, false, false, m, n, k, a.data(), m * k, b.data(), k * n,
                          c4.data(), m * n, false);
    kernels::set_max_threads(saved);
    CHECK(c1 == c4);
}

TEST_CASE("softmax_rows matches the reference and honours the mask") {
    std::mt19937_64 rng(4);
    const std::size_t n = 5, batch = 3;
    auto in = random_vec(batch * n * n, rng);
    for (auto& x : in) x *= 30.0;
    std::vector<double> mask(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i * n + i] = 1.0;
        mask[i * n + (i + 1) % n] = 1.0;
    }
    std::vector<double> o0(in.size()), o1(in.size());
    kernels::softmax_rows(batch * n, n, in.data(), mask.data(), n, o0.data());
    kernels::reference::softmax_rows(batch * n, n, in.data(), mask.data(), n, o1.data());
    CHECK(max_diff(o0, o1) < 1e-15);
    for (std::size_t r = 0; r < batch * n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (mask[(r % n) * n + j] == 0.0) CHECK(o0[r * n + j] == 0.0);
            s += o0[r * n + j];
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax_rows: hand-computed two-entry row") {
    const double in[2] = {10.0, 0.0};
    double out[2];
    kernels::softmax_rows(1, 2, in, nullptr, 1, out);
    const double e = std::exp(10.0);
    CHECK(out[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-14));
}
