#pragma once

#include <cstddef>

// Dense kernels behind the autodiff engine. Every kernel exists twice:
// `hgn::kernels::reference` is a plain serial loop nest used as the test
// oracle, `hgn::kernels` is the fast path (Eigen GEMM inside, OpenMP over
// independent batch items). Work is always partitioned per batch item and
// reductions over the batch run in a fixed serial order, so the fast path
// gives bit-identical results for any thread count.

namespace hgn::kernels {

/// C (m x n) = op(A) * op(B), or C += ... when `accumulate`.
/// op(A) is m x k, op(B) is k x n; all buffers row-major and contiguous.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

/// `batch` independent GEMMs. A stride of zero broadcasts that operand.
void gemm_batched(std::size_t batch, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                  std::size_t k, const double* a, std::size_t stride_a, const double* b,
                  std::size_t stride_b, double* c, std::size_t stride_c, bool accumulate);

/// Row softmax over `cols` entries of each of `rows` rows, restricted to
/// positions where mask != 0 (mask == nullptr means all positions). Row r
/// reads mask row (r % mask_rows), so an N x N mask serves a batch of N x N
/// blocks. Uses max subtraction. Off-mask outputs are exactly zero.
void softmax_rows(std::size_t rows, std::size_t cols, const double* in, const double* mask,
                  std::size_t mask_rows, double* out);

/// Number of threads the parallel kernels may use (HGN_THREADS caps it).
int max_threads();
void set_max_threads(int n);

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

void gemm_batched(std::size_t batch, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                  std::size_t k, const double* a, std::size_t stride_a, const double* b,
                  std::size_t stride_b, double* c, std::size_t stride_c, bool accumulate);

void softmax_rows(std::size_t rows, std::size_t cols, const double* in, const double* mask,
                  std::size_t mask_rows, double* out);

}  // namespace reference
}  // namespace hgn::kernels
