#pragma once

// Row-major dense kernels shared by the differentiable ops.

#include <cstddef>
#include <vector>

namespace polyavsr::kernels {

// C[M×N] += A[M×K]·B[K×N]
template <class R>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const R* A, const R* B, R* C) {
  for (std::size_t i = 0; i < M; ++i) {
    R* c = C + i * N;
    const R* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const R av = a[k];
      if (av == R(0)) continue;
      const R* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M×N] += Aᵀ·B with A stored K×M, B stored K×N.
template <class R>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const R* A, const R* B, R* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const R* a = A + k * M;
    const R* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const R av = a[i];
      if (av == R(0)) continue;
      R* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M×N] += A·Bᵀ with A stored M×K, B stored N×K.
template <class R>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const R* A, const R* B, R* C) {
  std::vector<R> bt(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_nn(M, N, K, A, bt.data(), C);
}

}  // namespace polyavsr::kernels
