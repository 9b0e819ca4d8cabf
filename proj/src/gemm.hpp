#pragma once

#include <cstddef>

namespace hxb::detail {

/// C[M,N] += A[M,K] * B[K,N], all row-major and contiguous. Each output element
/// is accumulated in a fixed order, so results do not depend on thread count.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

/// dst[cols,rows] = src[rows,cols]^T
void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

}  // namespace hxb::detail
