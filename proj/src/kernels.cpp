#include "dptq/kernels.hpp"

#include <algorithm>
#include <cmath>

// Both variants accumulate every output element in the same index order, so
// the parallel pragmas cannot change a single bit of the result.

namespace dptq::kern {

namespace serial {

void matmul(const double* a, const double* b, double* y,
            std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        std::fill(yrow, yrow + n, 0.0);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

void matmul_bias(const double* a, const double* b, const double* bias, double* y,
                 std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        std::copy(bias, bias + n, yrow);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const double* g, const double* b, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* yrow = y + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            yrow[p] += acc;
        }
    }
}

void matmul_tn_acc(const double* a, const double* g, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t p = 0; p < k; ++p) {
        double* yrow = y + p * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const double av = a[i * k + p];
            const double* grow = g + i * n;
            for (std::int64_t j = 0; j < n; ++j) yrow[j] += av * grow[j];
        }
    }
}

void colsum_acc(const double* g, double* y, std::int64_t m, std::int64_t n) {
    for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) acc += g[i * n + j];
        y[j] += acc;
    }
}

void add(const double* a, const double* b, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void relu(const double* x, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void fake_quant(const double* x, double* y, std::int64_t n,
                double scale, double zero_point, double qmin, double qmax) {
    for (std::int64_t i = 0; i < n; ++i) {
        double q = std::nearbyint(x[i] / scale) + zero_point;
        q = std::min(std::max(q, qmin), qmax);
        y[i] = (q - zero_point) * scale;
    }
}

double abs_max(const double* x, std::int64_t n) {
    double m = 0.0;
    for (std::int64_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
    return m;
}

void min_max(const double* x, std::int64_t n, double* lo, double* hi) {
    double l = x[0], h = x[0];
    for (std::int64_t i = 1; i < n; ++i) {
        l = std::min(l, x[i]);
        h = std::max(h, x[i]);
    }
    *lo = l;
    *hi = h;
}

}  // namespace serial

void matmul(const double* a, const double* b, double* y,
            std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * n >= 4096)
    for (std::int64_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        std::fill(yrow, yrow + n, 0.0);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

void matmul_bias(const double* a, const double* b, const double* bias, double* y,
                 std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * n >= 4096)
    for (std::int64_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        std::copy(bias, bias + n, yrow);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const double* g, const double* b, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k >= 4096)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* yrow = y + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            yrow[p] += acc;
        }
    }
}

void matmul_tn_acc(const double* a, const double* g, double* y,
                   std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static) if (k > 1 && k * n >= 4096)
    for (std::int64_t p = 0; p < k; ++p) {
        double* yrow = y + p * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const double av = a[i * k + p];
            const double* grow = g + i * n;
            for (std::int64_t j = 0; j < n; ++j) yrow[j] += av * grow[j];
        }
    }
}

void colsum_acc(const double* g, double* y, std::int64_t m, std::int64_t n) {
#pragma omp parallel for schedule(static) if (m * n >= 8192)
    for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) acc += g[i * n + j];
        y[j] += acc;
    }
}

void add(const double* a, const double* b, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void relu(const double* x, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void fake_quant(const double* x, double* y, std::int64_t n,
                double scale, double zero_point, double qmin, double qmax) {
#pragma omp parallel for schedule(static) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) {
        double q = std::nearbyint(x[i] / scale) + zero_point;
        q = std::min(std::max(q, qmin), qmax);
        y[i] = (q - zero_point) * scale;
    }
}

double abs_max(const double* x, std::int64_t n) {
    double m = 0.0;
    // max is exactly associative and commutative, safe to reduce in parallel
#pragma omp parallel for schedule(static) reduction(max : m) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
    return m;
}

void min_max(const double* x, std::int64_t n, double* lo, double* hi) {
    double l = x[0], h = x[0];
#pragma omp parallel for schedule(static) reduction(min : l) reduction(max : h) if (n >= 16384)
    for (std::int64_t i = 0; i < n; ++i) {
        l = std::min(l, x[i]);
        h = std::max(h, x[i]);
    }
    *lo = l;
    *hi = h;
}

}  // namespace dptq::kern
