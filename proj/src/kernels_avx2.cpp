// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; callers reach it only through the runtime dispatch table.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>

namespace comet::kern::avx2 {

namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

}  // namespace

// C[M,N] += A[M,K] * B[K,N]; 2-row x 16-col microkernel, scalar edges.
void gemm_nn(float* c, const float* a, const float* b, int m, int k, int n) {
    const int n16 = n & ~15;
    const int n8 = n & ~7;
    int i = 0;
    for (; i + 1 < m; i += 2) {
        const float* a0 = a + static_cast<std::size_t>(i) * k;
        const float* a1 = a0 + k;
        float* c0 = c + static_cast<std::size_t>(i) * n;
        float* c1 = c0 + n;
        int j = 0;
        for (; j < n16; j += 16) {
            __m256 acc00 = _mm256_loadu_ps(c0 + j);
            __m256 acc01 = _mm256_loadu_ps(c0 + j + 8);
            __m256 acc10 = _mm256_loadu_ps(c1 + j);
            __m256 acc11 = _mm256_loadu_ps(c1 + j + 8);
            const float* bp = b + j;
            for (int p = 0; p < k; ++p, bp += n) {
                const __m256 b0 = _mm256_loadu_ps(bp);
                const __m256 b1 = _mm256_loadu_ps(bp + 8);
                const __m256 av0 = _mm256_set1_ps(a0[p]);
                const __m256 av1 = _mm256_set1_ps(a1[p]);
                acc00 = _mm256_fmadd_ps(av0, b0, acc00);
                acc01 = _mm256_fmadd_ps(av0, b1, acc01);
                acc10 = _mm256_fmadd_ps(av1, b0, acc10);
                acc11 = _mm256_fmadd_ps(av1, b1, acc11);
            }
            _mm256_storeu_ps(c0 + j, acc00);
            _mm256_storeu_ps(c0 + j + 8, acc01);
            _mm256_storeu_ps(c1 + j, acc10);
            _mm256_storeu_ps(c1 + j + 8, acc11);
        }
        for (; j < n8; j += 8) {
            __m256 acc0 = _mm256_loadu_ps(c0 + j);
            __m256 acc1 = _mm256_loadu_ps(c1 + j);
            const float* bp = b + j;
            for (int p = 0; p < k; ++p, bp += n) {
                const __m256 bv = _mm256_loadu_ps(bp);
                acc0 = _mm256_fmadd_ps(_mm256_set1_ps(a0[p]), bv, acc0);
                acc1 = _mm256_fmadd_ps(_mm256_set1_ps(a1[p]), bv, acc1);
            }
            _mm256_storeu_ps(c0 + j, acc0);
            _mm256_storeu_ps(c1 + j, acc1);
        }
        for (; j < n; ++j) {
            float s0 = 0.f, s1 = 0.f;
            const float* bp = b + j;
            for (int p = 0; p < k; ++p, bp += n) {
                s0 += a0[p] * *bp;
                s1 += a1[p] * *bp;
            }
            c0[j] += s0;
            c1[j] += s1;
        }
    }
    for (; i < m; ++i) {
        const float* a0 = a + static_cast<std::size_t>(i) * k;
        float* c0 = c + static_cast<std::size_t>(i) * n;
        int j = 0;
        for (; j < n8; j += 8) {
            __m256 acc = _mm256_loadu_ps(c0 + j);
            const float* bp = b + j;
            for (int p = 0; p < k; ++p, bp += n)
                acc = _mm256_fmadd_ps(_mm256_set1_ps(a0[p]), _mm256_loadu_ps(bp), acc);
            _mm256_storeu_ps(c0 + j, acc);
        }
        for (; j < n; ++j) {
            float s = 0.f;
            const float* bp = b + j;
            for (int p = 0; p < k; ++p, bp += n) s += a0[p] * *bp;
            c0[j] += s;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]; accumulates into C row by row (C stays L1-resident
// for the shapes used here).
void gemm_tn(float* c, const float* a, const float* b, int m, int k, int n) {
    const int n8 = n & ~7;
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        const float* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.f) continue;
            float* crow = c + static_cast<std::size_t>(p) * n;
            const __m256 avv = _mm256_set1_ps(av);
            int j = 0;
            for (; j < n8; j += 8)
                _mm256_storeu_ps(crow + j,
                                 _mm256_fmadd_ps(avv, _mm256_loadu_ps(brow + j),
                                                 _mm256_loadu_ps(crow + j)));
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,K] += A[M,N] * B[K,N]^T; row-dot kernel.
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k) {
    const int n8 = n & ~7;
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * n;
        float* crow = c + static_cast<std::size_t>(i) * k;
        int p = 0;
        for (; p + 1 < k; p += 2) {
            const float* b0 = b + static_cast<std::size_t>(p) * n;
            const float* b1 = b0 + n;
            __m256 acc0 = _mm256_setzero_ps();
            __m256 acc1 = _mm256_setzero_ps();
            int j = 0;
            for (; j < n8; j += 8) {
                const __m256 av = _mm256_loadu_ps(arow + j);
                acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + j), acc0);
                acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + j), acc1);
            }
            float s0 = hsum8(acc0), s1 = hsum8(acc1);
            for (; j < n; ++j) {
                s0 += arow[j] * b0[j];
                s1 += arow[j] * b1[j];
            }
            crow[p] += s0;
            crow[p + 1] += s1;
        }
        for (; p < k; ++p) {
            const float* b0 = b + static_cast<std::size_t>(p) * n;
            __m256 acc = _mm256_setzero_ps();
            int j = 0;
            for (; j < n8; j += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + j), _mm256_loadu_ps(b0 + j), acc);
            float s = hsum8(acc);
            for (; j < n; ++j) s += arow[j] * b0[j];
            crow[p] += s;
        }
    }
}

void row_scale_add(float* y, const float* x, const float* s, int rows, int cols) {
    const int n8 = cols & ~7;
    for (int r = 0; r < rows; ++r) {
        const float sv = s[r];
        const float* xrow = x + static_cast<std::size_t>(r) * cols;
        float* yrow = y + static_cast<std::size_t>(r) * cols;
        const __m256 svv = _mm256_set1_ps(sv);
        int j = 0;
        for (; j < n8; j += 8)
            _mm256_storeu_ps(yrow + j, _mm256_fmadd_ps(svv, _mm256_loadu_ps(xrow + j),
                                                       _mm256_loadu_ps(yrow + j)));
        for (; j < cols; ++j) yrow[j] += sv * xrow[j];
    }
}

void row_dot_add(float* out, const float* a, const float* b, int rows, int cols) {
    const int n8 = cols & ~7;
    for (int r = 0; r < rows; ++r) {
        const float* arow = a + static_cast<std::size_t>(r) * cols;
        const float* brow = b + static_cast<std::size_t>(r) * cols;
        __m256 acc = _mm256_setzero_ps();
        int j = 0;
        for (; j < n8; j += 8)
            acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + j), _mm256_loadu_ps(brow + j), acc);
        float s = hsum8(acc);
        for (; j < cols; ++j) s += arow[j] * brow[j];
        out[r] += s;
    }
}

}  // namespace comet::kern::avx2

#endif  // x86_64
