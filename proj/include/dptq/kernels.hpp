#pragma once

#include <cstdint>

// Dense inner loops shared by the tape ops and the evaluation paths.
// dptq::kern versions carry OpenMP pragmas; dptq::kern::serial are the plain
// reference loops kept for testing and for the kernel benchmark.
//
// Parallel loops only ever write disjoint output elements and never perform a
// cross-thread floating-point sum, so kern and kern::serial agree bitwise and
// results do not depend on the thread count.

namespace dptq::kern {

// y[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* y,
            std::int64_t m, std::int64_t k, std::int64_t n);

// y[m x n] = a[m x k] * b[k x n] + bias[n] broadcast over rows
void matmul_bias(const double* a, const double* b, const double* bias, double* y,
                 std::int64_t m, std::int64_t k, std::int64_t n);

// y[m x k] += g[m x n] * b[k x n]^T   (dX of an affine layer)
void matmul_nt_acc(const double* g, const double* b, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n);

// y[k x n] += a[m x k]^T * g[m x n]   (dW of an affine layer)
void matmul_tn_acc(const double* a, const double* g, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n);

// y[n] += column sums of g[m x n]     (db of an affine layer)
void colsum_acc(const double* g, double* y, std::int64_t m, std::int64_t n);

void add(const double* a, const double* b, double* y, std::int64_t n);
void sub(const double* a, const double* b, double* y, std::int64_t n);
void mul(const double* a, const double* b, double* y, std::int64_t n);
void relu(const double* x, double* y, std::int64_t n);

// y = quantize-then-dequantize of x on the grid described by (scale, zero
// point, qmin, qmax); round is the current FP mode, i.e. half to even.
void fake_quant(const double* x, double* y, std::int64_t n,
                double scale, double zero_point, double qmin, double qmax);

double abs_max(const double* x, std::int64_t n);
void min_max(const double* x, std::int64_t n, double* lo, double* hi);

namespace serial {

void matmul(const double* a, const double* b, double* y,
            std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_bias(const double* a, const double* b, const double* bias, double* y,
                 std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_nt_acc(const double* g, const double* b, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_tn_acc(const double* a, const double* g, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n);
void colsum_acc(const double* g, double* y, std::int64_t m, std::int64_t n);
void add(const double* a, const double* b, double* y, std::int64_t n);
void sub(const double* a, const double* b, double* y, std::int64_t n);
void mul(const double* a, const double* b, double* y, std::int64_t n);
void relu(const double* x, double* y, std::int64_t n);
void fake_quant(const double* x, double* y, std::int64_t n,
                double scale, double zero_point, double qmin, double qmax);
double abs_max(const double* x, std::int64_t n);
void min_max(const double* x, std::int64_t n, double* lo, double* hi);

}  // namespace serial

}  // namespace dptq::kern
