#include "gemm.hpp"

#include <algorithm>

#include "hxbcos/parallel.hpp"

namespace hxb::detail {

namespace {
constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 256;

void gemm_rows(std::size_t i0, std::size_t rows, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c) {
  double acc[kRowBlock][kColBlock];
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t width = std::min(kColBlock, n - j0);
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(acc[r], width, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n + j0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double av = a[(i0 + r) * k + p];
        if (av == 0.0) continue;
        double* ar = acc[r];
        for (std::size_t j = 0; j < width; ++j) ar[j] += av * brow[j];
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double* crow = c + (i0 + r) * n + j0;
      for (std::size_t j = 0; j < width; ++j) crow[j] += acc[r][j];
    }
  }
}
}  // namespace

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  const bool parallel = worker_threads() > 1 && blocks > 1 && m * n * k > (1u << 18);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * kRowBlock;
    gemm_rows(i0, std::min(kRowBlock, m - i0), n, k, a, b, c);
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t t = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += t) {
    for (std::size_t j0 = 0; j0 < cols; j0 += t) {
      const std::size_t i1 = std::min(rows, i0 + t), j1 = std::min(cols, j0 + t);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

}  // namespace hxb::detail
