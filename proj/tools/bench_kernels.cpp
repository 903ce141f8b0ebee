// Timing comparison between the serial reference kernels and their OpenMP
// counterparts, with a bitwise equality check on every case.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "stvg/kernels.hpp"
#include "stvg/rng.hpp"

using namespace stvg;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <class F>
double time_ms(F&& f, int reps) {
    f();  // warm up
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) f();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

void report(const std::string& name, double serial_ms, double omp_ms, bool equal) {
    std::printf("%-28s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   %s\n",
                name.c_str(), serial_ms, omp_ms, serial_ms / omp_ms,
                equal ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    if (argc > 1) reps = std::atoi(argv[1]);
#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp disabled at build time; omp entry points fall back to serial\n");
#endif

    Rng rng(42);
    bool all_equal = true;

    {
        const int m = 384, k = 384, n = 384;
        const auto a = random_vec(rng, static_cast<size_t>(m) * k);
        const auto b = random_vec(rng, static_cast<size_t>(k) * n);
        std::vector<double> c0(static_cast<size_t>(m) * n), c1(c0.size());
        const double ts = time_ms([&] { kernels::matmul_serial(a.data(), b.data(), c0.data(), m, k, n, false, false); }, reps);
        const double tp = time_ms([&] { kernels::matmul_omp(a.data(), b.data(), c1.data(), m, k, n, false, false); }, reps);
        const bool eq = bits_equal(c0, c1);
        all_equal = all_equal && eq;
        report("matmul 384x384x384", ts, tp, eq);
    }
    {
        const int B = 64, m = 16, k = 32, n = 16;
        const auto a = random_vec(rng, static_cast<size_t>(B) * m * k);
        const auto b = random_vec(rng, static_cast<size_t>(B) * k * n);
        std::vector<double> c0(static_cast<size_t>(B) * m * n), c1(c0.size());
        const double ts = time_ms([&] { kernels::bmm_serial(a.data(), b.data(), c0.data(), B, m, k, n, false, true); }, reps);
        const double tp = time_ms([&] { kernels::bmm_omp(a.data(), b.data(), c1.data(), B, m, k, n, false, true); }, reps);
        const bool eq = bits_equal(c0, c1);
        all_equal = all_equal && eq;
        report("bmm 64x(16x32x16) nt", ts, tp, eq);
    }
    {
        const int rows = 8192, cols = 64;
        const auto x = random_vec(rng, static_cast<size_t>(rows) * cols);
        std::vector<double> y0(x.size()), y1(x.size());
        const double ts = time_ms([&] { kernels::softmax_rows_serial(x.data(), y0.data(), rows, cols); }, reps);
        const double tp = time_ms([&] { kernels::softmax_rows_omp(x.data(), y1.data(), rows, cols); }, reps);
        const bool eq = bits_equal(y0, y1);
        all_equal = all_equal && eq;
        report("softmax 8192x64", ts, tp, eq);
    }
    {
        const int rows = 8192, cols = 64;
        const auto x = random_vec(rng, static_cast<size_t>(rows) * cols);
        std::vector<double> gamma(cols, 1.0), beta(cols, 0.1);
        std::vector<double> y0(x.size()), y1(x.size());
        std::vector<double> mu(rows), rs(rows);
        const double ts = time_ms([&] { kernels::layer_norm_rows_serial(x.data(), gamma.data(), beta.data(), y0.data(), mu.data(), rs.data(), rows, cols, 1e-5); }, reps);
        const double tp = time_ms([&] { kernels::layer_norm_rows_omp(x.data(), gamma.data(), beta.data(), y1.data(), mu.data(), rs.data(), rows, cols, 1e-5); }, reps);
        const bool eq = bits_equal(y0, y1);
        all_equal = all_equal && eq;
        report("layer_norm 8192x64", ts, tp, eq);
    }

    if (!all_equal) {
        std::printf("FAILURE: serial/omp outputs diverged\n");
        return 1;
    }
    return 0;
}
