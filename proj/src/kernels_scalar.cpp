#include "folkvae/kernels.hpp"

namespace folkvae::kernels {
namespace {

void sc_gemm_nn(double* C, const double* A, const double* B,
                int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* c = C + size_t(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) c[j] = 0.0;
        const double* a = A + size_t(i) * k;
        for (int l = 0; l < k; ++l) {
            const double ail = a[l];
            const double* b = B + size_t(l) * n;
            for (int j = 0; j < n; ++j) c[j] += ail * b[j];
        }
    }
}

void sc_gemm_nt(double* C, const double* A, const double* B,
                int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + size_t(i) * k;
        double* c = C + size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b = B + size_t(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += a[l] * b[l];
            c[j] = accumulate ? c[j] + acc : acc;
        }
    }
}

void sc_gemm_tn(double* C, const double* A, const double* B,
                int m, int n, int k, bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < size_t(m) * n; ++i) C[i] = 0.0;
    for (int l = 0; l < k; ++l) {
        const double* a = A + size_t(l) * m;
        const double* b = B + size_t(l) * n;
        for (int i = 0; i < m; ++i) {
            const double ali = a[i];
            double* c = C + size_t(i) * n;
            for (int j = 0; j < n; ++j) c[j] += ali * b[j];
        }
    }
}

void sc_gemv(double* y, const double* A, const double* x,
             int m, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + size_t(i) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a[j] * x[j];
        y[i] = accumulate ? y[i] + acc : acc;
    }
}

void sc_gemv_t(double* y, const double* A, const double* x,
               int m, int n, bool accumulate) {
    if (!accumulate)
        for (int j = 0; j < n; ++j) y[j] = 0.0;
    for (int i = 0; i < m; ++i) {
        const double xi = x[i];
        const double* a = A + size_t(i) * n;
        for (int j = 0; j < n; ++j) y[j] += xi * a[j];
    }
}

void sc_axpy(double* y, double a, const double* x, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

double sc_dot(const double* x, const double* y, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void sc_scale(double* x, double a, int n) {
    for (int i = 0; i < n; ++i) x[i] *= a;
}

} // namespace

const Backend& scalar_backend() {
    static const Backend b{
        "scalar",
        sc_gemm_nn, sc_gemm_nt, sc_gemm_tn,
        sc_gemv, sc_gemv_t,
        sc_axpy, sc_dot, sc_scale,
    };
    return b;
}

} // namespace folkvae::kernels
