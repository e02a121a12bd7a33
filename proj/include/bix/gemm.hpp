#pragma once

#include <cstdint>

#include "bix/tensor.hpp"

namespace bix {

// Small dense kernels shared by matmul and the im2col convolution paths.
// All variants accumulate into C when `accumulate` is set.

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(int64_t m, int64_t k, int64_t n, const real* A,
                    const real* B, real* C, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        real* c = C + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) c[j] = 0;
        }
        const real* a = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const real ap = a[p];
            if (ap == 0) continue;
            const real* b = B + p * n;
            for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(int64_t m, int64_t k, int64_t n, const real* A,
                    const real* B, real* C, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        const real* a = A + i * k;
        real* c = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const real* b = B + j * k;
            real acc = 0;
            for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
            if (accumulate) {
                c[j] += acc;
            } else {
                c[j] = acc;
            }
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(int64_t m, int64_t k, int64_t n, const real* A,
                    const real* B, real* C, bool accumulate) {
    if (!accumulate) {
        for (int64_t i = 0; i < m * n; ++i) C[i] = 0;
    }
    for (int64_t p = 0; p < k; ++p) {
        const real* a = A + p * m;
        const real* b = B + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const real ai = a[i];
            if (ai == 0) continue;
            real* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) c[j] += ai * b[j];
        }
    }
}

}  // namespace bix
