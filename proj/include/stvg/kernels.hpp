#pragma once

#include <cstddef>

// Dense f64 kernels backing the tensor ops. Every kernel comes in a serial
// and an OpenMP variant; the unsuffixed entry dispatches between them based
// on problem size and the configured thread budget.
//
// Determinism contract: for a given input, serial and OpenMP variants produce
// bit-identical results. Parallelism is only ever over independent output
// elements; the accumulation order within one output element is fixed.

namespace stvg::kernels {

// 0 = use the OpenMP default, 1 = force the serial path everywhere.
void set_threads(int n);
int threads();

// ---------------------------------------------------------------------------
// matmul: c = op(a) * op(b), op controlled by ta/tb.
// op(a) is m x k, op(b) is k x n, c is m x n (overwritten).
// Stored dims: a is (ta ? k x m : m x k), b is (tb ? n x k : k x n).
// ---------------------------------------------------------------------------
void matmul_serial(const double* a, const double* b, double* c,
                   int m, int k, int n, bool ta, bool tb);
void matmul_omp(const double* a, const double* b, double* c,
                int m, int k, int n, bool ta, bool tb);
void matmul(const double* a, const double* b, double* c,
            int m, int k, int n, bool ta, bool tb);

// Accumulating form: c += op(a) * op(b). Used by backward passes to write
// straight into gradient buffers.
void matmul_acc_serial(const double* a, const double* b, double* c,
                       int m, int k, int n, bool ta, bool tb);
void matmul_acc_omp(const double* a, const double* b, double* c,
                    int m, int k, int n, bool ta, bool tb);
void matmul_acc(const double* a, const double* b, double* c,
                int m, int k, int n, bool ta, bool tb);

// Batched matmul over B independent blocks laid out contiguously.
void bmm_serial(const double* a, const double* b, double* c,
                int batches, int m, int k, int n, bool ta, bool tb);
void bmm_omp(const double* a, const double* b, double* c,
             int batches, int m, int k, int n, bool ta, bool tb);
void bmm(const double* a, const double* b, double* c,
         int batches, int m, int k, int n, bool ta, bool tb);

void bmm_acc_serial(const double* a, const double* b, double* c,
                    int batches, int m, int k, int n, bool ta, bool tb);
void bmm_acc_omp(const double* a, const double* b, double* c,
                 int batches, int m, int k, int n, bool ta, bool tb);
void bmm_acc(const double* a, const double* b, double* c,
             int batches, int m, int k, int n, bool ta, bool tb);

// ---------------------------------------------------------------------------
// Row-wise softmax over contiguous rows (max-shifted, overflow-safe).
// ---------------------------------------------------------------------------
void softmax_rows_serial(const double* x, double* y, int rows, int cols);
void softmax_rows_omp(const double* x, double* y, int rows, int cols);
void softmax_rows(const double* x, double* y, int rows, int cols);

// dx = (dy - sum(dy*y)) * y, per row.
void softmax_rows_backward_serial(const double* y, const double* dy, double* dx,
                                  int rows, int cols);
void softmax_rows_backward_omp(const double* y, const double* dy, double* dx,
                               int rows, int cols);
void softmax_rows_backward(const double* y, const double* dy, double* dx,
                           int rows, int cols);

// ---------------------------------------------------------------------------
// Row-wise layer norm. mean/rstd caches (one entry per row) are written on
// the forward pass and consumed by the backward pass.
// ---------------------------------------------------------------------------
void layer_norm_rows_serial(const double* x, const double* gamma, const double* beta,
                            double* y, double* mean, double* rstd,
                            int rows, int cols, double eps);
void layer_norm_rows_omp(const double* x, const double* gamma, const double* beta,
                         double* y, double* mean, double* rstd,
                         int rows, int cols, double eps);
void layer_norm_rows(const double* x, const double* gamma, const double* beta,
                     double* y, double* mean, double* rstd,
                     int rows, int cols, double eps);

// dgamma/dbeta are accumulated (+=); dx is overwritten.
void layer_norm_rows_backward_serial(const double* x, const double* gamma,
                                     const double* mean, const double* rstd,
                                     const double* dy, double* dx,
                                     double* dgamma, double* dbeta,
                                     int rows, int cols);
void layer_norm_rows_backward_omp(const double* x, const double* gamma,
                                  const double* mean, const double* rstd,
                                  const double* dy, double* dx,
                                  double* dgamma, double* dbeta,
                                  int rows, int cols);
void layer_norm_rows_backward(const double* x, const double* gamma,
                              const double* mean, const double* rstd,
                              const double* dy, double* dx,
                              double* dgamma, double* dbeta,
                              int rows, int cols);

// ---------------------------------------------------------------------------
// Elementwise map/zip. Dispatch inline; the functor is applied index-wise so
// serial and parallel orders coincide per element.
// ---------------------------------------------------------------------------
bool parallel_for_size(std::size_t work);

template <class F>
void map(const double* x, double* y, std::size_t n, F f) {
    if (parallel_for_size(n)) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            y[i] = f(x[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
    }
}

template <class F>
void zip(const double* a, const double* b, double* y, std::size_t n, F f) {
    if (parallel_for_size(n)) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            y[i] = f(a[i], b[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
    }
}

}  // namespace stvg::kernels
