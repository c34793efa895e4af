#include "doctest.h"

#include "folkvae/kernels.hpp"
#include "folkvae/rng.hpp"

#include <cmath>
#include <tuple>
#include <vector>

using namespace folkvae;
namespace k = folkvae::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gaussian();
    return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = std::fabs(a[i] - b[i]);
        double s = std::max(1.0, std::max(std::fabs(a[i]), std::fabs(b[i])));
        worst = std::max(worst, d / s);
    }
    return worst;
}

} // namespace

TEST_CASE("scalar gemm_nn matches hand example") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    std::vector<double> A{1, 2, 3, 4}, B{5, 6, 7, 8}, C(4, -1.0);
    k::scalar_backend().gemm_nn(C.data(), A.data(), B.data(), 2, 2, 2, false);
    CHECK(C == std::vector<double>{19, 22, 43, 50});
    k::scalar_backend().gemm_nn(C.data(), A.data(), B.data(), 2, 2, 2, true);
    CHECK(C == std::vector<double>{38, 44, 86, 100});
}

TEST_CASE("gemm variants agree with each other on transposed layouts") {
    Rng rng(7);
    const int m = 9, n = 13, kk = 17;
    auto A = random_vec(rng, m * kk);
    auto B = random_vec(rng, kk * n);
    const auto& sc = k::scalar_backend();

    std::vector<double> C_nn(m * n);
    sc.gemm_nn(C_nn.data(), A.data(), B.data(), m, n, kk, false);

    // B^T stored row-major (n x kk) fed through gemm_nt
    std::vector<double> Bt(n * kk);
    for (int i = 0; i < kk; ++i)
        for (int j = 0; j < n; ++j) Bt[size_t(j) * kk + i] = B[size_t(i) * n + j];
    std::vector<double> C_nt(m * n);
    sc.gemm_nt(C_nt.data(), A.data(), Bt.data(), m, n, kk, false);
    CHECK(max_rel_diff(C_nn, C_nt) == doctest::Approx(0.0).epsilon(1e-13));

    // A^T stored row-major (kk x m) fed through gemm_tn
    std::vector<double> At(kk * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < kk; ++j) At[size_t(j) * m + i] = A[size_t(i) * kk + j];
    std::vector<double> C_tn(m * n);
    sc.gemm_tn(C_tn.data(), At.data(), B.data(), m, n, kk, false);
    CHECK(max_rel_diff(C_nn, C_tn) < 1e-13);
}

TEST_CASE("avx2 backend equivalent to scalar reference") {
    if (!k::cpu_has_avx2() || std::string(k::avx2_backend().name) != "avx2") {
        MESSAGE("avx2 unavailable on this host; skipping equivalence checks");
        return;
    }
    const auto& sc = k::scalar_backend();
    const auto& vx = k::avx2_backend();
    Rng rng(42);

    // deliberately awkward sizes to hit every tail path
    const std::tuple<int, int, int> shapes[] = {
        {1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 31, 6}, {32, 192, 129}, {50, 17, 64}};
    for (auto [m, n, kk] : shapes) {
        auto A = random_vec(rng, size_t(m) * kk);
        auto B = random_vec(rng, size_t(kk) * n);
        auto Bt = random_vec(rng, size_t(n) * kk);
        auto At = random_vec(rng, size_t(kk) * m);
        auto x = random_vec(rng, kk);
        auto xm = random_vec(rng, m);

        std::vector<double> r1(size_t(m) * n), r2(size_t(m) * n);
        sc.gemm_nn(r1.data(), A.data(), B.data(), m, n, kk, false);
        vx.gemm_nn(r2.data(), A.data(), B.data(), m, n, kk, false);
        CHECK(max_rel_diff(r1, r2) < 1e-12);

        sc.gemm_nt(r1.data(), A.data(), Bt.data(), m, n, kk, false);
        vx.gemm_nt(r2.data(), A.data(), Bt.data(), m, n, kk, false);
        CHECK(max_rel_diff(r1, r2) < 1e-12);

        sc.gemm_tn(r1.data(), At.data(), B.data(), m, n, kk, false);
        vx.gemm_tn(r2.data(), At.data(), B.data(), m, n, kk, false);
        CHECK(max_rel_diff(r1, r2) < 1e-12);

        std::vector<double> y1(m), y2(m);
        sc.gemv(y1.data(), A.data(), x.data(), m, kk, false);
        vx.gemv(y2.data(), A.data(), x.data(), m, kk, false);
        CHECK(max_rel_diff(y1, y2) < 1e-12);

        std::vector<double> z1(kk), z2(kk);
        sc.gemv_t(z1.data(), A.data(), xm.data(), m, kk, false);
        vx.gemv_t(z2.data(), A.data(), xm.data(), m, kk, false);
        CHECK(max_rel_diff(z1, z2) < 1e-12);

        CHECK(sc.dot(x.data(), x.data(), kk)
              == doctest::Approx(vx.dot(x.data(), x.data(), kk)).epsilon(1e-12));
    }
}

TEST_CASE("accumulate flag adds instead of overwriting (both backends)") {
    Rng rng(3);
    const int m = 6, n = 10, kk = 12;
    auto A = random_vec(rng, size_t(m) * kk);
    auto B = random_vec(rng, size_t(kk) * n);
    for (const auto* b : {&k::scalar_backend(), &k::avx2_backend()}) {
        std::vector<double> once(size_t(m) * n), twice(size_t(m) * n);
        b->gemm_nn(once.data(), A.data(), B.data(), m, n, kk, false);
        b->gemm_nn(twice.data(), A.data(), B.data(), m, n, kk, false);
        b->gemm_nn(twice.data(), A.data(), B.data(), m, n, kk, true);
        for (size_t i = 0; i < once.size(); ++i)
            CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
    }
}

TEST_CASE("backend dispatch honors force_backend") {
    k::force_backend("scalar");
    CHECK(std::string(k::active().name) == "scalar");
    CHECK_THROWS(k::force_backend("mmx"));
    k::force_backend("auto");
    if (k::cpu_has_avx2() && std::string(k::avx2_backend().name) == "avx2")
        CHECK(std::string(k::active().name) == "avx2");
    else
        CHECK(std::string(k::active().name) == "scalar");
}
