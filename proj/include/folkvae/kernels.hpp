#pragma once

#include <cstddef>
#include <string>

namespace folkvae::kernels {

// Dense double-precision primitives behind the recurrent nets. All matrices
// are row-major. Two interchangeable backends exist: a scalar reference and
// an AVX2/FMA variant; the active one is picked at runtime from cpuid and can
// be overridden with force_backend() or the FOLKVAE_KERNELS env var
// ("scalar" | "avx2" | "auto"). Backends agree to floating-point roundoff
// (association order differs), which the kernel tests pin down.
struct Backend {
    const char* name;

    // C(m x n) = [C +] A(m x k) * B(k x n)
    void (*gemm_nn)(double* C, const double* A, const double* B,
                    int m, int n, int k, bool accumulate);
    // C(m x n) = [C +] A(m x k) * B(n x k)^T
    void (*gemm_nt)(double* C, const double* A, const double* B,
                    int m, int n, int k, bool accumulate);
    // C(m x n) = [C +] A(k x m)^T * B(k x n)
    void (*gemm_tn)(double* C, const double* A, const double* B,
                    int m, int n, int k, bool accumulate);
    // y(m) = [y +] A(m x n) * x(n)
    void (*gemv)(double* y, const double* A, const double* x,
                 int m, int n, bool accumulate);
    // y(n) = [y +] A(m x n)^T * x(m)
    void (*gemv_t)(double* y, const double* A, const double* x,
                   int m, int n, bool accumulate);
    // y += a * x
    void (*axpy)(double* y, double a, const double* x, int n);
    double (*dot)(const double* x, const double* y, int n);
    void (*scale)(double* x, double a, int n);
};

const Backend& scalar_backend();
const Backend& avx2_backend();   // falls back to scalar when unsupported at build time
bool cpu_has_avx2();

// Active backend; resolved on first use.
const Backend& active();

// "scalar", "avx2" or "auto"; throws folkvae::Error on unknown name or when
// avx2 is requested on a CPU without it.
void force_backend(const std::string& name);

} // namespace folkvae::kernels
