#include "folkvae/tsne.hpp"
#include "folkvae/error.hpp"
#include "folkvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace folkvae::eval {

Mat tsne_2d(const Mat& X, double perplexity, int iterations, uint64_t seed) {
    const int N = X.rows, D = X.cols;
    if (N < 4) throw data_error("tsne_2d: need at least 4 points");
    if (perplexity <= 1.0 || perplexity >= double(N))
        throw config_error("tsne_2d: perplexity must be in (1, N)");

    // pairwise squared distances
    std::vector<double> d2(size_t(N) * N, 0.0);
    for (int i = 0; i < N; ++i) {
        for (int j = i + 1; j < N; ++j) {
            double s = 0.0;
            const double* xi = X.row(i);
            const double* xj = X.row(j);
            for (int k = 0; k < D; ++k) {
                const double diff = xi[k] - xj[k];
                s += diff * diff;
            }
            d2[size_t(i) * N + j] = s;
            d2[size_t(j) * N + i] = s;
        }
    }

    // conditional affinities with per-point bandwidth search
    const double target_entropy = std::log(perplexity);
    std::vector<double> P(size_t(N) * N, 0.0);
    std::vector<double> row(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 64; ++iter) {
            double sum = 0.0, dsum = 0.0;
            for (int j = 0; j < N; ++j) {
                if (j == i) { row[size_t(j)] = 0.0; continue; }
                const double p = std::exp(-beta * d2[size_t(i) * N + j]);
                row[size_t(j)] = p;
                sum += p;
                dsum += p * d2[size_t(i) * N + j];
            }
            if (sum <= 0.0) { beta *= 0.5; beta_hi = beta * 2.0; continue; }
            const double entropy = std::log(sum) + beta * dsum / sum;
            const double diff = entropy - target_entropy;
            if (std::fabs(diff) < 1e-5) break;
            if (diff > 0) {  // entropy too high -> narrow the kernel
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
        }
        double sum = 0.0;
        for (int j = 0; j < N; ++j) sum += row[size_t(j)];
        for (int j = 0; j < N; ++j) P[size_t(i) * N + j] = row[size_t(j)] / sum;
    }

    // symmetrize
    double psum = 0.0;
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
            const double v = (P[size_t(i) * N + j] + P[size_t(j) * N + i]);
            P[size_t(i) * N + j] = v;
            P[size_t(j) * N + i] = v;
            psum += 2.0 * v;
        }
    for (auto& v : P) v = std::max(v / psum, 1e-12);

    Mat Y(N, 2);
    Rng rng(seed);
    for (auto& v : Y.v) v = rng.gaussian() * 1e-4;

    Mat dY(N, 2), gains(N, 2), update(N, 2);
    std::fill(gains.v.begin(), gains.v.end(), 1.0);
    std::vector<double> q(size_t(N) * N, 0.0);

    const int exaggeration_until = std::min(100, iterations / 2);
    constexpr double kExaggeration = 12.0;
    constexpr double kLearningRate = 200.0;

    for (int it = 0; it < iterations; ++it) {
        const double ex = it < exaggeration_until ? kExaggeration : 1.0;
        double Z = 0.0;
        for (int i = 0; i < N; ++i)
            for (int j = i + 1; j < N; ++j) {
                const double dy0 = Y.at(i, 0) - Y.at(j, 0);
                const double dy1 = Y.at(i, 1) - Y.at(j, 1);
                const double num = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q[size_t(i) * N + j] = num;
                q[size_t(j) * N + i] = num;
                Z += 2.0 * num;
            }

        dY.zero();
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) {
                if (i == j) continue;
                const double num = q[size_t(i) * N + j];
                const double coeff = (ex * P[size_t(i) * N + j] - num / Z) * num;
                dY.at(i, 0) += 4.0 * coeff * (Y.at(i, 0) - Y.at(j, 0));
                dY.at(i, 1) += 4.0 * coeff * (Y.at(i, 1) - Y.at(j, 1));
            }
        }

        const double momentum = it < 250 ? 0.5 : 0.8;
        for (size_t k = 0; k < Y.v.size(); ++k) {
            const bool same_sign = (dY.v[k] > 0) == (update.v[k] > 0);
            gains.v[k] = std::max(0.01, same_sign ? gains.v[k] * 0.8 : gains.v[k] + 0.2);
            update.v[k] = momentum * update.v[k] - kLearningRate * gains.v[k] * dY.v[k];
            Y.v[k] += update.v[k];
        }
        // recentre
        double m0 = 0.0, m1 = 0.0;
        for (int i = 0; i < N; ++i) { m0 += Y.at(i, 0); m1 += Y.at(i, 1); }
        m0 /= N; m1 /= N;
        for (int i = 0; i < N; ++i) { Y.at(i, 0) -= m0; Y.at(i, 1) -= m1; }
    }
    return Y;
}

} // namespace folkvae::eval
