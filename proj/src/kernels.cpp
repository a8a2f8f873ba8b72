#include "ltm/kernels.hpp"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ltm::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel.load();
#else
    return false;
#endif
}

int thread_count() {
#ifdef _OPENMP
    return parallel_enabled() ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

// --- gemm -------------------------------------------------------------
//
// Inner k-loop order is identical in the serial and parallel paths; the
// parallel paths only distribute whole output rows across threads.

namespace {

inline void gemm_nn_row(const double* a, const double* b, double* c, int i, int k, int n, bool accumulate) {
    double* crow = c + static_cast<int64_t>(i) * n;
    if (!accumulate)
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int t = 0; t < k; ++t) {
        const double ait = arow[t];
        const double* brow = b + static_cast<int64_t>(t) * n;
        for (int j = 0; j < n; ++j) crow[j] += ait * brow[j];
    }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, int i, int k, int n, bool accumulate) {
    double* crow = c + static_cast<int64_t>(i) * n;
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<int64_t>(j) * k;
        double acc = 0.0;
        for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
        crow[j] = accumulate ? crow[j] + acc : acc;
    }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, int i, int k, int m, int n, bool accumulate) {
    // c[i,:] = sum_t a[t,i] * b[t,:]
    double* crow = c + static_cast<int64_t>(i) * n;
    if (!accumulate)
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
    for (int t = 0; t < k; ++t) {
        const double ati = a[static_cast<int64_t>(t) * m + i];
        const double* brow = b + static_cast<int64_t>(t) * n;
        for (int j = 0; j < n; ++j) crow[j] += ati * brow[j];
    }
}

}  // namespace

void gemm_nn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) gemm_nn_row(a, b, c, i, k, n, accumulate);
}

void gemm_nt_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) gemm_nt_row(a, b, c, i, k, n, accumulate);
}

void gemm_tn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) gemm_tn_row(a, b, c, i, k, m, n, accumulate);
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!parallel_enabled() || m < 2) {
        gemm_nn_serial(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) gemm_nn_row(a, b, c, i, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!parallel_enabled() || m < 2) {
        gemm_nt_serial(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) gemm_nt_row(a, b, c, i, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!parallel_enabled() || m < 2) {
        gemm_tn_serial(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) gemm_tn_row(a, b, c, i, k, m, n, accumulate);
}

// --- softmax ----------------------------------------------------------

namespace {
inline void softmax_row(const double* x, double* y, int64_t cols) {
    double mx = x[0];
    for (int64_t j = 1; j < cols; ++j)
        if (x[j] > mx) mx = x[j];
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
}
}  // namespace

void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
    if (!parallel_enabled() || rows < 2) {
        softmax_rows_serial(x, y, rows, cols);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

// --- layernorm ----------------------------------------------------------

namespace {
inline void layernorm_row(const double* x, const double* gain, const double* bias, double* y,
                          double* save_mean, double* save_rstd, int64_t i, int64_t cols, double eps) {
    const double* xr = x + i * cols;
    double mean = 0.0;
    for (int64_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double rstd = 1.0 / std::sqrt(var + eps);
    double* yr = y + i * cols;
    for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
    if (save_mean) save_mean[i] = mean;
    if (save_rstd) save_rstd[i] = rstd;
}
}  // namespace

void layernorm_rows_serial(const double* x, const double* gain, const double* bias, double* y,
                           double* save_mean, double* save_rstd, int64_t rows, int64_t cols, double eps) {
    for (int64_t i = 0; i < rows; ++i) layernorm_row(x, gain, bias, y, save_mean, save_rstd, i, cols, eps);
}

void layernorm_rows(const double* x, const double* gain, const double* bias, double* y,
                    double* save_mean, double* save_rstd, int64_t rows, int64_t cols, double eps) {
    if (!parallel_enabled() || rows < 2) {
        layernorm_rows_serial(x, gain, bias, y, save_mean, save_rstd, rows, cols, eps);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) layernorm_row(x, gain, bias, y, save_mean, save_rstd, i, cols, eps);
}

// --- elementwise --------------------------------------------------------

#define LTM_ELEMENTWISE(body)                       \
    if (!parallel_enabled() || n < (1 << 12)) {     \
        for (int64_t i = 0; i < n; ++i) { body; }   \
        return;                                     \
    }                                               \
    _Pragma("omp parallel for schedule(static)")    \
    for (int64_t i = 0; i < n; ++i) { body; }

void relu(const double* x, double* y, int64_t n) { LTM_ELEMENTWISE(y[i] = x[i] > 0.0 ? x[i] : 0.0) }

void sigmoid(const double* x, double* y, int64_t n) {
    LTM_ELEMENTWISE(y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                       : std::exp(x[i]) / (1.0 + std::exp(x[i])))
}

void add(const double* a, const double* b, double* y, int64_t n) { LTM_ELEMENTWISE(y[i] = a[i] + b[i]) }
void sub(const double* a, const double* b, double* y, int64_t n) { LTM_ELEMENTWISE(y[i] = a[i] - b[i]) }
void mul(const double* a, const double* b, double* y, int64_t n) { LTM_ELEMENTWISE(y[i] = a[i] * b[i]) }
void scale(const double* a, double s, double* y, int64_t n) { LTM_ELEMENTWISE(y[i] = a[i] * s) }

#undef LTM_ELEMENTWISE

}  // namespace ltm::kernels
