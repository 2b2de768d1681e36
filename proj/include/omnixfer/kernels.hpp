#pragma once

#include <algorithm>
#include <cmath>

#include "omnixfer/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omnixfer::kernels {

/// Thread cap for the parallel kernels. Initialized from OMNIXFER_THREADS
/// (falling back to the OpenMP default) and adjustable at runtime.
int max_threads();
void set_max_threads(int n);

// Below this many multiply-adds a parallel region costs more than it saves.
inline constexpr int64_t kMinParallelWork = 1 << 15;

namespace detail {
inline bool go_parallel(int64_t rows, int64_t work) {
    return rows > 1 && work >= kMinParallelWork && max_threads() > 1;
}
}  // namespace detail

template <typename T>
void check_matmul_shapes(const Tensor<T>& a, const Tensor<T>& b, int64_t b_inner, const char* op) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": need rank-2 operands, got " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    if (a.dim(1) != b_inner) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    }
}

/// C[i,j] = sum_t A[i,t] * B[t,j], each output element accumulated in
/// increasing t so results are bit-identical at any thread count.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_matmul_shapes(a, b, b.dim(0), "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    const T* ap = a.data();
    const T* bp = b.data();
    T* cp = c.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads()) \
    if (detail::go_parallel(m, m* n* k))
#endif
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = ap + i * k;
        T* crow = cp + i * n;
        for (int64_t t = 0; t < k; ++t) {
            const T av = arow[t];
            const T* brow = bp + t * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    check_finite(c, "matmul");
    return c;
}

/// Serial reference: naive i-j-t triple loop. Kept for testing the parallel
/// kernel; accumulation order per element matches matmul exactly.
template <typename T>
Tensor<T> matmul_serial(const Tensor<T>& a, const Tensor<T>& b) {
    check_matmul_shapes(a, b, b.dim(0), "matmul_serial");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (int64_t t = 0; t < k; ++t) acc += a(i, t) * b(t, j);
            c(i, j) = acc;
        }
    }
    check_finite(c, "matmul_serial");
    return c;
}

/// C = A * B^T with A [m,k], B [n,k].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    check_matmul_shapes(a, b, a.dim(1), "matmul_nt");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> c({m, n});
    const T* ap = a.data();
    const T* bp = b.data();
    T* cp = c.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads()) \
    if (detail::go_parallel(m, m* n* k))
#endif
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = ap + i * k;
        T* crow = cp + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = bp + j * k;
            T acc = T(0);
            for (int64_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
            crow[j] = acc;
        }
    }
    check_finite(c, "matmul_nt");
    return c;
}

template <typename T>
Tensor<T> matmul_nt_serial(const Tensor<T>& a, const Tensor<T>& b) {
    check_matmul_shapes(a, b, a.dim(1), "matmul_nt_serial");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (int64_t t = 0; t < k; ++t) acc += a(i, t) * b(j, t);
            c(i, j) = acc;
        }
    }
    check_finite(c, "matmul_nt_serial");
    return c;
}

/// Row-wise softmax with per-row max subtraction. Rows are processed in
/// parallel; within a row the reduction order is fixed left to right.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
    if (m.rank() != 2) {
        throw std::invalid_argument("softmax_rows: need rank-2 input, got " + shape_str(m.shape()));
    }
    const int64_t rows = m.dim(0), cols = m.dim(1);
    if (cols == 0) throw std::invalid_argument("softmax_rows: empty rows");
    Tensor<T> out(m.shape());
    const T* mp = m.data();
    T* op = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads()) \
    if (detail::go_parallel(rows, rows* cols * 8))
#endif
    for (int64_t i = 0; i < rows; ++i) {
        const T* row = mp + i * cols;
        T* orow = op + i * cols;
        T mx = row[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < cols; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int64_t j = 0; j < cols; ++j) orow[j] /= denom;
    }
    check_finite(out, "softmax_rows");
    return out;
}

template <typename T>
Tensor<T> softmax_rows_serial(const Tensor<T>& m) {
    if (m.rank() != 2) {
        throw std::invalid_argument("softmax_rows_serial: need rank-2 input");
    }
    const int64_t rows = m.dim(0), cols = m.dim(1);
    if (cols == 0) throw std::invalid_argument("softmax_rows_serial: empty rows");
    Tensor<T> out(m.shape());
    for (int64_t i = 0; i < rows; ++i) {
        T mx = m(i, 0);
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, m(i, j));
        T denom = T(0);
        for (int64_t j = 0; j < cols; ++j) {
            out(i, j) = std::exp(m(i, j) - mx);
            denom += out(i, j);
        }
        for (int64_t j = 0; j < cols; ++j) out(i, j) /= denom;
    }
    return out;
}

}  // namespace omnixfer::kernels
