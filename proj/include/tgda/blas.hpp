#pragma once

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdint>
#include <mutex>

#include "tgda/common.hpp"

namespace tgda::blas {

// OpenBLAS is pinned to one internal thread; parallelism comes from the
// fixed-chunk partitioning below. Chunk boundaries depend only on the
// problem shape, never on the running thread count, so results are
// bit-identical for any OMP_NUM_THREADS.
inline void init() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

inline int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {

inline void gemm_raw(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                     const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
                     float* c, int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm_raw(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha,
                     const double* a, int64_t lda, const double* b, int64_t ldb, double beta,
                     double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

constexpr int64_t kMinChunk = 192;        // smallest useful slice
constexpr int64_t kMaxChunks = 16;        // fixed task count, independent of threads
constexpr int64_t kSplitWork = 1 << 23;   // below this, a single call wins

// Slice size depends only on the extent, never on the running thread count,
// so the per-element accumulation order is invariant.
inline int64_t chunk_for(int64_t extent) {
  int64_t chunk = (extent + kMaxChunks - 1) / kMaxChunks;
  chunk = ((chunk + 63) / 64) * 64;
  return std::max(chunk, kMinChunk);
}

}  // namespace detail

// Row-major C[M,N] = alpha * op(A) @ op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  init();
  const int64_t work = m * n * k;
  const bool split_n = n >= 2 * detail::kMinChunk;
  const bool split_m = m >= 2 * detail::kMinChunk;
  if (work < detail::kSplitWork || (!split_n && !split_m) || num_threads() == 1) {
    detail::gemm_raw(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  if (split_n) {
    const int64_t chunk = detail::chunk_for(n);
    const int64_t chunks = (n + chunk - 1) / chunk;
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < chunks; ++ci) {
      const int64_t j0 = ci * chunk;
      const int64_t nj = std::min(chunk, n - j0);
      const T* b_slice = trans_b ? b + j0 * ldb : b + j0;
      detail::gemm_raw(trans_a, trans_b, m, nj, k, alpha, a, lda, b_slice, ldb, beta, c + j0, ldc);
    }
  } else {
    const int64_t chunk = detail::chunk_for(m);
    const int64_t chunks = (m + chunk - 1) / chunk;
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < chunks; ++ci) {
      const int64_t i0 = ci * chunk;
      const int64_t ni = std::min(chunk, m - i0);
      const T* a_slice = trans_a ? a + i0 : a + i0 * lda;
      detail::gemm_raw(trans_a, trans_b, ni, n, k, alpha, a_slice, lda, b, ldb, beta, c + i0 * ldc,
                       ldc);
    }
  }
}

}  // namespace tgda::blas
