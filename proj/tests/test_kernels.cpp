#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "stvg/kernels.hpp"
#include "stvg/rng.hpp"

using namespace stvg;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

// Reference product, plain three nested loops over (i, j, p).
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n, bool ta, bool tb) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = ta ? a[static_cast<size_t>(p) * m + i] : a[static_cast<size_t>(i) * k + p];
                const double bv = tb ? b[static_cast<size_t>(j) * k + p] : b[static_cast<size_t>(p) * n + j];
                s += av * bv;
            }
            c[static_cast<size_t>(i) * n + j] = s;
        }
    return c;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("matmul matches the naive triple-loop oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = rng.uniform_int(1, 8);
        const int k = rng.uniform_int(1, 8);
        const int n = rng.uniform_int(1, 8);
        for (int flags = 0; flags < 4; ++flags) {
            const bool ta = flags & 1, tb = flags & 2;
            const auto a = random_vec(rng, static_cast<size_t>(m) * k);
            const auto b = random_vec(rng, static_cast<size_t>(k) * n);
            std::vector<double> c(static_cast<size_t>(m) * n);
            kernels::matmul_serial(a.data(), b.data(), c.data(), m, k, n, ta, tb);
            const auto ref = naive_matmul(a, b, m, k, n, ta, tb);
            for (size_t i = 0; i < c.size(); ++i)
                CHECK(std::abs(c[i] - ref[i]) <= 1e-12);
        }
    }
}

TEST_CASE("openmp matmul is bit-identical to serial") {
    Rng rng(11);
    for (int flags = 0; flags < 4; ++flags) {
        const bool ta = flags & 1, tb = flags & 2;
        const int m = 37, k = 29, n = 41;
        const auto a = random_vec(rng, static_cast<size_t>(m) * k);
        const auto b = random_vec(rng, static_cast<size_t>(k) * n);
        std::vector<double> c0(static_cast<size_t>(m) * n), c1(c0.size());
        kernels::matmul_serial(a.data(), b.data(), c0.data(), m, k, n, ta, tb);
        kernels::matmul_omp(a.data(), b.data(), c1.data(), m, k, n, ta, tb);
        CHECK(bits_equal(c0, c1));
    }
}

TEST_CASE("openmp bmm is bit-identical to serial") {
    Rng rng(13);
    const int B = 6, m = 5, k = 7, n = 4;
    for (int flags = 0; flags < 4; ++flags) {
        const bool ta = flags & 1, tb = flags & 2;
        const auto a = random_vec(rng, static_cast<size_t>(B) * m * k);
        const auto b = random_vec(rng, static_cast<size_t>(B) * k * n);
        std::vector<double> c0(static_cast<size_t>(B) * m * n), c1(c0.size());
        kernels::bmm_serial(a.data(), b.data(), c0.data(), B, m, k, n, ta, tb);
        kernels::bmm_omp(a.data(), b.data(), c1.data(), B, m, k, n, ta, tb);
        CHECK(bits_equal(c0, c1));
    }
}

TEST_CASE("bmm blocks equal independent matmuls") {
    Rng rng(17);
    const int B = 4, m = 3, k = 5, n = 2;
    const auto a = random_vec(rng, static_cast<size_t>(B) * m * k);
    const auto b = random_vec(rng, static_cast<size_t>(B) * k * n);
    std::vector<double> c(static_cast<size_t>(B) * m * n);
    kernels::bmm_serial(a.data(), b.data(), c.data(), B, m, k, n, false, false);
    for (int g = 0; g < B; ++g) {
        std::vector<double> block(static_cast<size_t>(m) * n);
        kernels::matmul_serial(a.data() + g * m * k, b.data() + g * k * n, block.data(),
                               m, k, n, false, false);
        for (int i = 0; i < m * n; ++i)
            CHECK(c[static_cast<size_t>(g) * m * n + i] == block[static_cast<size_t>(i)]);
    }
}

TEST_CASE("softmax kernel: rows sum to one, omp parity") {
    Rng rng(19);
    const int rows = 33, cols = 12;
    const auto x = random_vec(rng, static_cast<size_t>(rows) * cols);
    std::vector<double> y0(x.size()), y1(x.size());
    kernels::softmax_rows_serial(x.data(), y0.data(), rows, cols);
    kernels::softmax_rows_omp(x.data(), y1.data(), rows, cols);
    CHECK(bits_equal(y0, y1));
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double v = y0[static_cast<size_t>(i) * cols + j];
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }

    const auto dy = random_vec(rng, x.size());
    std::vector<double> dx0(x.size()), dx1(x.size());
    kernels::softmax_rows_backward_serial(y0.data(), dy.data(), dx0.data(), rows, cols);
    kernels::softmax_rows_backward_omp(y0.data(), dy.data(), dx1.data(), rows, cols);
    CHECK(bits_equal(dx0, dx1));
}

TEST_CASE("layer norm kernel: statistics and omp parity") {
    Rng rng(23);
    const int rows = 21, cols = 16;
    const auto x = random_vec(rng, static_cast<size_t>(rows) * cols);
    std::vector<double> gamma(cols, 1.0), beta(cols, 0.0);
    std::vector<double> y0(x.size()), y1(x.size());
    std::vector<double> mu0(rows), rs0(rows), mu1(rows), rs1(rows);
    kernels::layer_norm_rows_serial(x.data(), gamma.data(), beta.data(), y0.data(),
                                    mu0.data(), rs0.data(), rows, cols, 1e-5);
    kernels::layer_norm_rows_omp(x.data(), gamma.data(), beta.data(), y1.data(),
                                 mu1.data(), rs1.data(), rows, cols, 1e-5);
    CHECK(bits_equal(y0, y1));
    for (int i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += y0[static_cast<size_t>(i) * cols + j];
        mean /= cols;
        CHECK(std::abs(mean) <= 1e-12);
    }

    const auto dy = random_vec(rng, x.size());
    std::vector<double> dx0(x.size()), dx1(x.size());
    std::vector<double> dg0(cols, 0.0), db0(cols, 0.0), dg1(cols, 0.0), db1(cols, 0.0);
    kernels::layer_norm_rows_backward_serial(x.data(), gamma.data(), mu0.data(), rs0.data(),
                                             dy.data(), dx0.data(), dg0.data(), db0.data(),
                                             rows, cols);
    kernels::layer_norm_rows_backward_omp(x.data(), gamma.data(), mu1.data(), rs1.data(),
                                          dy.data(), dx1.data(), dg1.data(), db1.data(),
                                          rows, cols);
    CHECK(bits_equal(dx0, dx1));
    CHECK(bits_equal(dg0, dg1));
    CHECK(bits_equal(db0, db1));
}

TEST_CASE("dispatching entry point stays deterministic under thread settings") {
    Rng rng(29);
    const int m = 64, k = 48, n = 52;
    const auto a = random_vec(rng, static_cast<size_t>(m) * k);
    const auto b = random_vec(rng, static_cast<size_t>(k) * n);
    std::vector<double> c0(static_cast<size_t>(m) * n), c1(c0.size());
    kernels::set_threads(1);
    kernels::matmul(a.data(), b.data(), c0.data(), m, k, n, false, false);
    kernels::set_threads(0);
    kernels::matmul(a.data(), b.data(), c1.data(), m, k, n, false, false);
    CHECK(bits_equal(c0, c1));
}
