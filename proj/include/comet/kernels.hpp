#pragma once

#include <cstddef>
#include <type_traits>

namespace comet::kern {

// Matrix kernels used by the tape. All matrices are dense row-major and all
// kernels ACCUMULATE into C. Shapes in comments; leading dimension == column
// count (no padding).
//
// The float entry points dispatch at runtime between the scalar reference
// implementation and a SIMD variant (AVX2/FMA when the CPU supports it).
// The reference implementations in kern::ref are the ground truth the SIMD
// paths are equivalence-tested against.

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(float* c, const float* a, const float* b, int m, int k, int n);
// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(float* c, const float* a, const float* b, int m, int k, int n);
// C[M,K] += A[M,N] * B[K,N]^T
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k);
// Y[r,:] += s[r] * X[r,:]   (per-row scaling)
void row_scale_add(float* y, const float* x, const float* s, int rows, int cols);
// out[r] += dot(A[r,:], B[r,:])
void row_dot_add(float* out, const float* a, const float* b, int rows, int cols);

enum class Isa { scalar, avx2 };

Isa active_isa();
const char* isa_name(Isa isa);
// Force a specific path (tests); throws if the ISA is not available on this CPU.
void force_isa(Isa isa);
bool isa_available(Isa isa);

namespace ref {

template <class T>
void gemm_nn(T* c, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_tn(T* c, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        const T* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* crow = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_nt(T* c, const T* a, const T* b, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * n;
        T* crow = c + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T* brow = b + static_cast<std::size_t>(p) * n;
            T acc = T(0);
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

template <class T>
void row_scale_add(T* y, const T* x, const T* s, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const T sv = s[r];
        const T* xrow = x + static_cast<std::size_t>(r) * cols;
        T* yrow = y + static_cast<std::size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) yrow[j] += sv * xrow[j];
    }
}

template <class T>
void row_dot_add(T* out, const T* a, const T* b, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const T* arow = a + static_cast<std::size_t>(r) * cols;
        const T* brow = b + static_cast<std::size_t>(r) * cols;
        T acc = T(0);
        for (int j = 0; j < cols; ++j) acc += arow[j] * brow[j];
        out[r] += acc;
    }
}

}  // namespace ref

// Typed entry points so templated tape code picks the dispatched float path
// and the reference path for double.
template <class T>
inline void mm_nn(T* c, const T* a, const T* b, int m, int k, int n) {
    if constexpr (std::is_same_v<T, float>) gemm_nn(c, a, b, m, k, n);
    else ref::gemm_nn(c, a, b, m, k, n);
}
template <class T>
inline void mm_tn(T* c, const T* a, const T* b, int m, int k, int n) {
    if constexpr (std::is_same_v<T, float>) gemm_tn(c, a, b, m, k, n);
    else ref::gemm_tn(c, a, b, m, k, n);
}
template <class T>
inline void mm_nt(T* c, const T* a, const T* b, int m, int n, int k) {
    if constexpr (std::is_same_v<T, float>) gemm_nt(c, a, b, m, n, k);
    else ref::gemm_nt(c, a, b, m, n, k);
}
template <class T>
inline void rs_add(T* y, const T* x, const T* s, int rows, int cols) {
    if constexpr (std::is_same_v<T, float>) row_scale_add(y, x, s, rows, cols);
    else ref::row_scale_add(y, x, s, rows, cols);
}
template <class T>
inline void rd_add(T* out, const T* a, const T* b, int rows, int cols) {
    if constexpr (std::is_same_v<T, float>) row_dot_add(out, a, b, rows, cols);
    else ref::row_dot_add(out, a, b, rows, cols);
}

}  // namespace comet::kern
