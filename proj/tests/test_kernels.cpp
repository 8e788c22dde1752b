#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowforge/kernels.hpp"
#include "flowforge/rng.hpp"

using namespace flowforge;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, scale);
    return v;
}

bool close(double a, double b, double rel = 1e-12) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1.0});
    return std::fabs(a - b) <= rel * denom;
}

bool close_vec(const std::vector<double>& a, const std::vector<double>& b,
               double rel = 1e-12) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!close(a[i], b[i], rel)) return false;
    return true;
}

// sizes that exercise full vectors plus every remainder lane
const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 257, 1000};

}  // namespace

TEST_CASE("avx2 backend is available on this machine") {
    // The equivalence suite below is only meaningful when both variants run.
    REQUIRE(kernels::backend_supported(kernels::Backend::Scalar));
    CHECK(kernels::backend_supported(kernels::Backend::Avx2));
}

TEST_CASE("scalar and avx2 reductions agree") {
    if (!kernels::backend_supported(kernels::Backend::Avx2)) return;
    Rng rng(42);
    for (std::size_t n : kSizes) {
        for (int rep = 0; rep < 5; ++rep) {
            const auto a = random_vec(rng, n);
            const auto b = random_vec(rng, n);
            CAPTURE(n);
            CHECK(close(kernels::scalar::dot(a.data(), b.data(), n),
                        kernels::avx2::dot(a.data(), b.data(), n)));
            CHECK(close(kernels::scalar::sq_dist(a.data(), b.data(), n),
                        kernels::avx2::sq_dist(a.data(), b.data(), n)));
            CHECK(close(kernels::scalar::reduce_sum(a.data(), n),
                        kernels::avx2::reduce_sum(a.data(), n)));
            CHECK(kernels::scalar::reduce_max(a.data(), n) ==
                  kernels::avx2::reduce_max(a.data(), n));
        }
    }
}

TEST_CASE("scalar and avx2 elementwise kernels agree") {
    if (!kernels::backend_supported(kernels::Backend::Avx2)) return;
    Rng rng(43);
    for (std::size_t n : kSizes) {
        const auto a = random_vec(rng, n);
        const auto b = random_vec(rng, n);
        const double alpha = rng.normal();
        const double c = rng.normal();

        std::vector<double> ys = b, yv = b;
        kernels::scalar::axpy(alpha, a.data(), ys.data(), n);
        kernels::avx2::axpy(alpha, a.data(), yv.data(), n);
        CHECK(close_vec(ys, yv));

        std::vector<double> xs = a, xv = a;
        kernels::scalar::scale(alpha, xs.data(), n);
        kernels::avx2::scale(alpha, xv.data(), n);
        CHECK(close_vec(xs, xv));

        std::vector<double> os(n), ov(n);
        kernels::scalar::vadd(a.data(), b.data(), os.data(), n);
        kernels::avx2::vadd(a.data(), b.data(), ov.data(), n);
        CHECK(close_vec(os, ov));
        kernels::scalar::vmul(a.data(), b.data(), os.data(), n);
        kernels::avx2::vmul(a.data(), b.data(), ov.data(), n);
        CHECK(close_vec(os, ov));
        kernels::scalar::vaffine(a.data(), alpha, c, os.data(), n);
        kernels::avx2::vaffine(a.data(), alpha, c, ov.data(), n);
        CHECK(close_vec(os, ov));
    }
}

TEST_CASE("scalar and avx2 gemm variants agree") {
    if (!kernels::backend_supported(kernels::Backend::Avx2)) return;
    Rng rng(44);
    const std::size_t dims[][3] = {{1, 1, 1}, {2, 3, 4},  {5, 7, 3},
                                   {8, 8, 8}, {9, 17, 5}, {16, 33, 20}};
    for (const auto& d : dims) {
        const std::size_t m = d[0], n = d[1], k = d[2];
        const auto a_nn = random_vec(rng, m * k);
        const auto b_nn = random_vec(rng, k * n);
        std::vector<double> cs = random_vec(rng, m * n);
        std::vector<double> cv = cs;
        kernels::scalar::gemm_nn(a_nn.data(), b_nn.data(), cs.data(), m, n, k);
        kernels::avx2::gemm_nn(a_nn.data(), b_nn.data(), cv.data(), m, n, k);
        CHECK(close_vec(cs, cv));

        const auto b_nt = random_vec(rng, n * k);
        cs = cv = random_vec(rng, m * n);
        kernels::scalar::gemm_nt(a_nn.data(), b_nt.data(), cs.data(), m, n, k);
        kernels::avx2::gemm_nt(a_nn.data(), b_nt.data(), cv.data(), m, n, k);
        CHECK(close_vec(cs, cv));

        const auto a_tn = random_vec(rng, k * m);
        cs = cv = random_vec(rng, m * n);
        kernels::scalar::gemm_tn(a_tn.data(), b_nn.data(), cs.data(), m, n, k);
        kernels::avx2::gemm_tn(a_tn.data(), b_nn.data(), cv.data(), m, n, k);
        CHECK(close_vec(cs, cv));
    }
}

TEST_CASE("gemm matches a naive triple loop") {
    Rng rng(45);
    const std::size_t m = 6, n = 5, k = 7;
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    std::vector<double> expected(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p)
                expected[i * n + j] += a[i * k + p] * b[p * n + j];
    std::vector<double> got(m * n, 0.0);
    kernels::gemm_nn(a.data(), b.data(), got.data(), m, n, k);
    CHECK(close_vec(expected, got, 1e-13));
}

TEST_CASE("nearest_row returns the argmin with lowest-index ties") {
    const std::vector<double> table = {0.0, 0.0, 1.0, 1.0, 1.0, 1.0};  // rows 1,2 equal
    const std::vector<double> q = {0.9, 0.8};
    double dist = 0.0;
    CHECK(kernels::nearest_row(table.data(), 3, 2, q.data(), &dist) == 1);
    const std::vector<double> tie = {1.0, 1.0};
    CHECK(kernels::nearest_row(table.data(), 3, 2, tie.data()) == 1);  // not 2
}

TEST_CASE("backend dispatch can be switched at runtime") {
    const auto original = kernels::active_backend();
    kernels::set_backend(kernels::Backend::Scalar);
    CHECK(kernels::active_backend() == kernels::Backend::Scalar);
    const double a[4] = {1, 2, 3, 4};
    CHECK(kernels::dot(a, a, 4) == doctest::Approx(30.0));
    if (kernels::backend_supported(kernels::Backend::Avx2)) {
        kernels::set_backend(kernels::Backend::Avx2);
        CHECK(kernels::active_backend() == kernels::Backend::Avx2);
        CHECK(kernels::dot(a, a, 4) == doctest::Approx(30.0));
    }
    kernels::set_backend(original);
}
