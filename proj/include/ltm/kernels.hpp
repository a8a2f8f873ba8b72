#pragma once

#include <cstdint>

namespace ltm::kernels {

// Runtime switch between the serial reference path and the OpenMP path.
// Both paths are bit-identical by construction: every output element is
// written by exactly one thread using the serial accumulation order.
void set_parallel(bool enabled);
bool parallel_enabled();
int thread_count();

// c[m,n] = a[m,k] * b[k,n]   (+= when accumulate)
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
// c[m,n] = a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
// c[m,n] = a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// Reference implementations, always single-threaded; kept for the
// bit-identity tests and the benchmark baseline.
void gemm_nn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void gemm_nt_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void gemm_tn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// y rows are softmax(x rows), max-subtracted.
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t cols);

// Row-wise layer normalization over the last axis. Saves per-row mean and
// reciprocal stddev for the backward pass (buffers may be null).
void layernorm_rows(const double* x, const double* gain, const double* bias, double* y,
                    double* save_mean, double* save_rstd, int64_t rows, int64_t cols, double eps);
void layernorm_rows_serial(const double* x, const double* gain, const double* bias, double* y,
                           double* save_mean, double* save_rstd, int64_t rows, int64_t cols, double eps);

// Elementwise maps.
void relu(const double* x, double* y, int64_t n);
void sigmoid(const double* x, double* y, int64_t n);
void add(const double* a, const double* b, double* y, int64_t n);
void sub(const double* a, const double* b, double* y, int64_t n);
void mul(const double* a, const double* b, double* y, int64_t n);
void scale(const double* a, double s, double* y, int64_t n);

}  // namespace ltm::kernels
