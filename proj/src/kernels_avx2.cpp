#include "folkvae/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace folkvae::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

// c[0..n) += a * b[0..n)
inline void fma_row(double* c, double a, const double* b, int n) {
    const __m256d va = _mm256_set1_pd(a);
    int j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        __m256d c1 = _mm256_loadu_pd(c + j + 4);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
        c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j + 4), c1);
        _mm256_storeu_pd(c + j, c0);
        _mm256_storeu_pd(c + j + 4, c1);
    }
    for (; j + 4 <= n; j += 4) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
        _mm256_storeu_pd(c + j, c0);
    }
    for (; j < n; ++j) c[j] += a * b[j];
}

void vx_gemm_nn(double* C, const double* A, const double* B,
                int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* c = C + size_t(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) c[j] = 0.0;
        const double* a = A + size_t(i) * k;
        int l = 0;
        // two rank-1 row updates fused per pass keeps c hot in registers
        for (; l + 2 <= k; l += 2) {
            const __m256d a0 = _mm256_set1_pd(a[l]);
            const __m256d a1 = _mm256_set1_pd(a[l + 1]);
            const double* b0 = B + size_t(l) * n;
            const double* b1 = B + size_t(l + 1) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d c0 = _mm256_loadu_pd(c + j);
                c0 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), c0);
                c0 = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), c0);
                _mm256_storeu_pd(c + j, c0);
            }
            for (; j < n; ++j) c[j] += a[l] * b0[j] + a[l + 1] * b1[j];
        }
        for (; l < k; ++l) fma_row(c, a[l], B + size_t(l) * n, n);
    }
}

void vx_gemm_nt(double* C, const double* A, const double* B,
                int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + size_t(i) * k;
        double* c = C + size_t(i) * n;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = B + size_t(j) * k;
            const double* b1 = B + size_t(j + 1) * k;
            const double* b2 = B + size_t(j + 2) * k;
            const double* b3 = B + size_t(j + 3) * k;
            __m256d s0 = _mm256_setzero_pd();
            __m256d s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd();
            __m256d s3 = _mm256_setzero_pd();
            int l = 0;
            for (; l + 4 <= k; l += 4) {
                const __m256d av = _mm256_loadu_pd(a + l);
                s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + l), s0);
                s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + l), s1);
                s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + l), s2);
                s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + l), s3);
            }
            double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
            for (; l < k; ++l) {
                r0 += a[l] * b0[l];
                r1 += a[l] * b1[l];
                r2 += a[l] * b2[l];
                r3 += a[l] * b3[l];
            }
            if (accumulate) { c[j] += r0; c[j+1] += r1; c[j+2] += r2; c[j+3] += r3; }
            else            { c[j]  = r0; c[j+1]  = r1; c[j+2]  = r2; c[j+3]  = r3; }
        }
        for (; j < n; ++j) {
            const double* b = B + size_t(j) * k;
            __m256d s = _mm256_setzero_pd();
            int l = 0;
            for (; l + 4 <= k; l += 4)
                s = _mm256_fmadd_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(b + l), s);
            double r = hsum(s);
            for (; l < k; ++l) r += a[l] * b[l];
            c[j] = accumulate ? c[j] + r : r;
        }
    }
}

void vx_gemm_tn(double* C, const double* A, const double* B,
                int m, int n, int k, bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < size_t(m) * n; ++i) C[i] = 0.0;
    for (int l = 0; l < k; ++l) {
        const double* a = A + size_t(l) * m;
        const double* b = B + size_t(l) * n;
        for (int i = 0; i < m; ++i)
            fma_row(C + size_t(i) * n, a[i], b, n);
    }
}

void vx_gemv(double* y, const double* A, const double* x,
             int m, int n, bool accumulate) {
    int i = 0;
    for (; i + 2 <= m; i += 2) {
        const double* a0 = A + size_t(i) * n;
        const double* a1 = A + size_t(i + 1) * n;
        __m256d s0 = _mm256_setzero_pd();
        __m256d s1 = _mm256_setzero_pd();
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const __m256d xv = _mm256_loadu_pd(x + j);
            s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a0 + j), xv, s0);
            s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a1 + j), xv, s1);
        }
        double r0 = hsum(s0), r1 = hsum(s1);
        for (; j < n; ++j) { r0 += a0[j] * x[j]; r1 += a1[j] * x[j]; }
        if (accumulate) { y[i] += r0; y[i + 1] += r1; }
        else            { y[i]  = r0; y[i + 1]  = r1; }
    }
    for (; i < m; ++i) {
        const double* a = A + size_t(i) * n;
        __m256d s = _mm256_setzero_pd();
        int j = 0;
        for (; j + 4 <= n; j += 4)
            s = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(x + j), s);
        double r = hsum(s);
        for (; j < n; ++j) r += a[j] * x[j];
        y[i] = accumulate ? y[i] + r : r;
    }
}

void vx_gemv_t(double* y, const double* A, const double* x,
               int m, int n, bool accumulate) {
    if (!accumulate)
        for (int j = 0; j < n; ++j) y[j] = 0.0;
    for (int i = 0; i < m; ++i)
        fma_row(y, x[i], A + size_t(i) * n, n);
}

void vx_axpy(double* y, double a, const double* x, int n) {
    fma_row(y, a, x, n);
}

double vx_dot(const double* x, const double* y, int n) {
    __m256d s = _mm256_setzero_pd();
    int j = 0;
    for (; j + 4 <= n; j += 4)
        s = _mm256_fmadd_pd(_mm256_loadu_pd(x + j), _mm256_loadu_pd(y + j), s);
    double r = hsum(s);
    for (; j < n; ++j) r += x[j] * y[j];
    return r;
}

void vx_scale(double* x, double a, int n) {
    const __m256d va = _mm256_set1_pd(a);
    int j = 0;
    for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(x + j, _mm256_mul_pd(va, _mm256_loadu_pd(x + j)));
    for (; j < n; ++j) x[j] *= a;
}

} // namespace

const Backend& avx2_backend() {
    static const Backend b{
        "avx2",
        vx_gemm_nn, vx_gemm_nt, vx_gemm_tn,
        vx_gemv, vx_gemv_t,
        vx_axpy, vx_dot, vx_scale,
    };
    return b;
}

} // namespace folkvae::kernels

#else // no AVX2/FMA at build time: alias to scalar so dispatch always links

namespace folkvae::kernels {
const Backend& avx2_backend() { return scalar_backend(); }
} // namespace folkvae::kernels

#endif
