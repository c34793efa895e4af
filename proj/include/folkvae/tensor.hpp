#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace folkvae {

// Minimal row-major matrix-of-doubles container. All heavy arithmetic runs
// through kernels::active(); this type only owns storage.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(size_t(r) * c, 0.0) {}

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double* row(int r) { return v.data() + size_t(r) * cols; }
    const double* row(int r) const { return v.data() + size_t(r) * cols; }

    double& at(int r, int c) { return v[size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[size_t(r) * cols + c]; }

    std::span<double> row_span(int r) { return {row(r), size_t(cols)}; }
    std::span<const double> row_span(int r) const { return {row(r), size_t(cols)}; }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace folkvae
