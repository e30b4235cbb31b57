#include "hgn/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hgn::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

int g_threads = [] {
    int n = 1;
#ifdef _OPENMP
    n = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("HGN_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return std::max(n, 1);
}();

void gemm_eigen(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
                const double* b, double* c, bool accumulate) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    Map cm(c, M, N);
    if (!accumulate) cm.setZero();
    if (m == 0 || n == 0 || k == 0) return;
    // Stored shapes: A is (m,k) or (k,m); B is (k,n) or (n,k).
    if (!ta && !tb) {
        cm.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
    } else if (!ta && tb) {
        cm.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
    } else if (ta && !tb) {
        cm.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
    } else {
        cm.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
    }
}

void softmax_row(std::size_t cols, const double* in, const double* mask, double* out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
        if (!mask || mask[j] != 0.0) mx = std::max(mx, in[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        if (!mask || mask[j] != 0.0) {
            out[j] = std::exp(in[j] - mx);
            total += out[j];
        } else {
            out[j] = 0.0;
        }
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

}  // namespace

int max_threads() { return g_threads; }
void set_max_threads(int n) { g_threads = std::max(n, 1); }

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    gemm_eigen(trans_a, trans_b, m, n, k, a, b, c, accumulate);
}

void gemm_batched(std::size_t batch, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                  std::size_t k, const double* a, std::size_t stride_a, const double* b,
                  std::size_t stride_b, double* c, std::size_t stride_c, bool accumulate) {
    const auto nb = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (batch > 1 && g_threads > 1)
    for (std::ptrdiff_t i = 0; i < nb; ++i) {
        const auto u = static_cast<std::size_t>(i);
        gemm_eigen(trans_a, trans_b, m, n, k, a + u * stride_a, b + u * stride_b, c + u * stride_c,
                   accumulate);
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* in, const double* mask,
                  std::size_t mask_rows, double* out) {
    const auto nr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (rows > 64 && g_threads > 1)
    for (std::ptrdiff_t r = 0; r < nr; ++r) {
        const auto u = static_cast<std::size_t>(r);
        softmax_row(cols, in + u * cols, mask ? mask + (u % mask_rows) * cols : nullptr,
                    out + u * cols);
    }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * m + i] : a[i * k + p];
                const double bv = trans_b ? b[j * k + p] : b[p * n + j];
                s += av * bv;
            }
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

void gemm_batched(std::size_t batch, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                  std::size_t k, const double* a, std::size_t stride_a, const double* b,
                  std::size_t stride_b, double* c, std::size_t stride_c, bool accumulate) {
    for (std::size_t i = 0; i < batch; ++i) {
        gemm(trans_a, trans_b, m, n, k, a + i * stride_a, b + i * stride_b, c + i * stride_c,
             accumulate);
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* in, const double* mask,
                  std::size_t mask_rows, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        softmax_row(cols, in + r * cols, mask ? mask + (r % mask_rows) * cols : nullptr,
                    out + r * cols);
    }
}

}  // namespace reference
}  // namespace hgn::kernels
