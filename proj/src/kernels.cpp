#include "stvg/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stvg::kernels {

namespace {

std::atomic<int> g_threads{0};

// Work thresholds below which threading overhead dominates.
constexpr std::size_t kMatmulFlopCutoff = 32768;
constexpr std::size_t kRowOpCutoff = 8192;
constexpr std::size_t kMapCutoff = 65536;

bool parallel_enabled() {
#ifdef _OPENMP
    return g_threads.load(std::memory_order_relaxed) != 1;
#else
    return false;
#endif
}

template <bool Acc>
inline void matmul_block(const double* a, const double* b, double* c,
                         int m, int k, int n, bool ta, bool tb, int i) {
    // One output row c[i,:]; accumulation over k is always ascending.
    double* ci = c + static_cast<std::size_t>(i) * n;
    if (!ta && !tb) {
        if (!Acc) std::fill(ci, ci + n, 0.0);
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    } else if (!ta && tb) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            if (Acc)
                ci[j] += s;
            else
                ci[j] = s;
        }
    } else if (ta && !tb) {
        if (!Acc) std::fill(ci, ci + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(p) * m + i];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    } else {
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[static_cast<std::size_t>(p) * m + i] * bj[p];
            if (Acc)
                ci[j] += s;
            else
                ci[j] = s;
        }
    }
}

inline void softmax_row(const double* x, double* y, int cols) {
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < cols; ++j) y[j] *= inv;
}

inline void softmax_bwd_row(const double* y, const double* dy, double* dx, int cols) {
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += y[j] * dy[j];
    for (int j = 0; j < cols; ++j) dx[j] = (dy[j] - dot) * y[j];
}

inline void layer_norm_row(const double* x, const double* gamma, const double* beta,
                           double* y, double* mean, double* rstd, int cols, double eps) {
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += x[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double d = x[j] - mu;
        var += d * d;
    }
    var /= cols;
    const double rs = 1.0 / std::sqrt(var + eps);
    *mean = mu;
    *rstd = rs;
    for (int j = 0; j < cols; ++j) y[j] = (x[j] - mu) * rs * gamma[j] + beta[j];
}

inline void layer_norm_bwd_dx_row(const double* x, const double* gamma,
                                  double mu, double rs, const double* dy,
                                  double* dx, int cols) {
    // xhat = (x - mu) * rs; dxhat = dy * gamma
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double xhat = (x[j] - mu) * rs;
        const double dxhat = dy[j] * gamma[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
    }
    const double inv_n = 1.0 / cols;
    for (int j = 0; j < cols; ++j) {
        const double xhat = (x[j] - mu) * rs;
        const double dxhat = dy[j] * gamma[j];
        dx[j] = rs * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
    }
}

}  // namespace

void set_threads(int n) {
    g_threads.store(n < 0 ? 0 : n, std::memory_order_relaxed);
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int threads() { return g_threads.load(std::memory_order_relaxed); }

bool parallel_for_size(std::size_t work) {
    return parallel_enabled() && work >= kMapCutoff;
}

void matmul_serial(const double* a, const double* b, double* c,
                   int m, int k, int n, bool ta, bool tb) {
    for (int i = 0; i < m; ++i) matmul_block<false>(a, b, c, m, k, n, ta, tb, i);
}

void matmul_omp(const double* a, const double* b, double* c,
                int m, int k, int n, bool ta, bool tb) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) matmul_block<false>(a, b, c, m, k, n, ta, tb, i);
}

void matmul(const double* a, const double* b, double* c,
            int m, int k, int n, bool ta, bool tb) {
    const std::size_t flops = static_cast<std::size_t>(m) * k * n;
    if (parallel_enabled() && flops >= kMatmulFlopCutoff && m > 1)
        matmul_omp(a, b, c, m, k, n, ta, tb);
    else
        matmul_serial(a, b, c, m, k, n, ta, tb);
}

void matmul_acc_serial(const double* a, const double* b, double* c,
                       int m, int k, int n, bool ta, bool tb) {
    for (int i = 0; i < m; ++i) matmul_block<true>(a, b, c, m, k, n, ta, tb, i);
}

void matmul_acc_omp(const double* a, const double* b, double* c,
                    int m, int k, int n, bool ta, bool tb) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) matmul_block<true>(a, b, c, m, k, n, ta, tb, i);
}

void matmul_acc(const double* a, const double* b, double* c,
                int m, int k, int n, bool ta, bool tb) {
    const std::size_t flops = static_cast<std::size_t>(m) * k * n;
    if (parallel_enabled() && flops >= kMatmulFlopCutoff && m > 1)
        matmul_acc_omp(a, b, c, m, k, n, ta, tb);
    else
        matmul_acc_serial(a, b, c, m, k, n, ta, tb);
}

void bmm_serial(const double* a, const double* b, double* c,
                int batches, int m, int k, int n, bool ta, bool tb) {
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    for (int g = 0; g < batches; ++g)
        matmul_serial(a + g * sa, b + g * sb, c + g * sc, m, k, n, ta, tb);
}

void bmm_omp(const double* a, const double* b, double* c,
             int batches, int m, int k, int n, bool ta, bool tb) {
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    const long long total = static_cast<long long>(batches) * m;
#pragma omp parallel for schedule(static)
    for (long long t = 0; t < total; ++t) {
        const int g = static_cast<int>(t / m);
        const int i = static_cast<int>(t % m);
        matmul_block<false>(a + g * sa, b + g * sb, c + g * sc, m, k, n, ta, tb, i);
    }
}

void bmm(const double* a, const double* b, double* c,
         int batches, int m, int k, int n, bool ta, bool tb) {
    const std::size_t flops = static_cast<std::size_t>(batches) * m * k * n;
    if (parallel_enabled() && flops >= kMatmulFlopCutoff && batches * m > 1)
        bmm_omp(a, b, c, batches, m, k, n, ta, tb);
    else
        bmm_serial(a, b, c, batches, m, k, n, ta, tb);
}

void bmm_acc_serial(const double* a, const double* b, double* c,
                    int batches, int m, int k, int n, bool ta, bool tb) {
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    for (int g = 0; g < batches; ++g)
        matmul_acc_serial(a + g * sa, b + g * sb, c + g * sc, m, k, n, ta, tb);
}

void bmm_acc_omp(const double* a, const double* b, double* c,
                 int batches, int m, int k, int n, bool ta, bool tb) {
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    const long long total = static_cast<long long>(batches) * m;
#pragma omp parallel for schedule(static)
    for (long long t = 0; t < total; ++t) {
        const int g = static_cast<int>(t / m);
        const int i = static_cast<int>(t % m);
        matmul_block<true>(a + g * sa, b + g * sb, c + g * sc, m, k, n, ta, tb, i);
    }
}

void bmm_acc(const double* a, const double* b, double* c,
             int batches, int m, int k, int n, bool ta, bool tb) {
    const std::size_t flops = static_cast<std::size_t>(batches) * m * k * n;
    if (parallel_enabled() && flops >= kMatmulFlopCutoff && batches * m > 1)
        bmm_acc_omp(a, b, c, batches, m, k, n, ta, tb);
    else
        bmm_acc_serial(a, b, c, batches, m, k, n, ta, tb);
}

void softmax_rows_serial(const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        softmax_row(x + static_cast<std::size_t>(i) * cols,
                    y + static_cast<std::size_t>(i) * cols, cols);
}

void softmax_rows_omp(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i)
        softmax_row(x + static_cast<std::size_t>(i) * cols,
                    y + static_cast<std::size_t>(i) * cols, cols);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
    if (parallel_enabled() && static_cast<std::size_t>(rows) * cols >= kRowOpCutoff && rows > 1)
        softmax_rows_omp(x, y, rows, cols);
    else
        softmax_rows_serial(x, y, rows, cols);
}

void softmax_rows_backward_serial(const double* y, const double* dy, double* dx,
                                  int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        softmax_bwd_row(y + off, dy + off, dx + off, cols);
    }
}

void softmax_rows_backward_omp(const double* y, const double* dy, double* dx,
                               int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        softmax_bwd_row(y + off, dy + off, dx + off, cols);
    }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx,
                           int rows, int cols) {
    if (parallel_enabled() && static_cast<std::size_t>(rows) * cols >= kRowOpCutoff && rows > 1)
        softmax_rows_backward_omp(y, dy, dx, rows, cols);
    else
        softmax_rows_backward_serial(y, dy, dx, rows, cols);
}

void layer_norm_rows_serial(const double* x, const double* gamma, const double* beta,
                            double* y, double* mean, double* rstd,
                            int rows, int cols, double eps) {
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        layer_norm_row(x + off, gamma, beta, y + off, mean + i, rstd + i, cols, eps);
    }
}

void layer_norm_rows_omp(const double* x, const double* gamma, const double* beta,
                         double* y, double* mean, double* rstd,
                         int rows, int cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        layer_norm_row(x + off, gamma, beta, y + off, mean + i, rstd + i, cols, eps);
    }
}

void layer_norm_rows(const double* x, const double* gamma, const double* beta,
                     double* y, double* mean, double* rstd,
                     int rows, int cols, double eps) {
    if (parallel_enabled() && static_cast<std::size_t>(rows) * cols >= kRowOpCutoff && rows > 1)
        layer_norm_rows_omp(x, gamma, beta, y, mean, rstd, rows, cols, eps);
    else
        layer_norm_rows_serial(x, gamma, beta, y, mean, rstd, rows, cols, eps);
}

void layer_norm_rows_backward_serial(const double* x, const double* gamma,
                                     const double* mean, const double* rstd,
                                     const double* dy, double* dx,
                                     double* dgamma, double* dbeta,
                                     int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        layer_norm_bwd_dx_row(x + off, gamma, mean[i], rstd[i], dy + off, dx + off, cols);
    }
    // Column reductions, row order ascending per column.
    for (int j = 0; j < cols; ++j) {
        double dg = 0.0, db = 0.0;
        for (int i = 0; i < rows; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * cols + j;
            dg += dy[off] * (x[off] - mean[i]) * rstd[i];
            db += dy[off];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

void layer_norm_rows_backward_omp(const double* x, const double* gamma,
                                  const double* mean, const double* rstd,
                                  const double* dy, double* dx,
                                  double* dgamma, double* dbeta,
                                  int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        layer_norm_bwd_dx_row(x + off, gamma, mean[i], rstd[i], dy + off, dx + off, cols);
    }
#pragma omp parallel for schedule(static)
    for (int j = 0; j < cols; ++j) {
        double dg = 0.0, db = 0.0;
        for (int i = 0; i < rows; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * cols + j;
            dg += dy[off] * (x[off] - mean[i]) * rstd[i];
            db += dy[off];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

void layer_norm_rows_backward(const double* x, const double* gamma,
                              const double* mean, const double* rstd,
                              const double* dy, double* dx,
                              double* dgamma, double* dbeta,
                              int rows, int cols) {
    if (parallel_enabled() && static_cast<std::size_t>(rows) * cols >= kRowOpCutoff && rows > 1)
        layer_norm_rows_backward_omp(x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, cols);
    else
        layer_norm_rows_backward_serial(x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, cols);
}

}  // namespace stvg::kernels
