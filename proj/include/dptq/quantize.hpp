#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dptq/tensor.hpp"

namespace dptq {

enum class QuantScheme { symmetric, asymmetric };

struct ScaleRule {
    enum class Kind { abs_max, min_max, percentile };
    Kind kind = Kind::abs_max;
    double q = 99.9;  // only read when kind == percentile, in (50, 100]
};

// Integer grid parameters. zero_point is integer-valued but kept as double
// because every use site feeds it straight into FP arithmetic.
struct QuantSpec {
    QuantScheme scheme = QuantScheme::symmetric;
    int bit_width = 8;
    double scale = 1.0;
    double zero_point = 0.0;

    double qmin() const {
        return scheme == QuantScheme::symmetric ? -std::ldexp(1.0, bit_width - 1) : 0.0;
    }
    double qmax() const {
        return scheme == QuantScheme::symmetric ? std::ldexp(1.0, bit_width - 1) - 1.0
                                                : std::ldexp(1.0, bit_width) - 1.0;
    }
};

struct QuantizedTensor {
    std::vector<std::int64_t> shape;
    std::vector<std::int32_t> values;
    QuantSpec spec;
};

inline constexpr double kQuantScaleEpsilon = 1e-12;
inline constexpr int kMinBitWidth = 2;
inline constexpr int kMaxBitWidth = 24;

// Derives grid parameters from data, per-tensor granularity.
//   symmetric:  s = absmax / (2^(b-1) - 1), z = 0
//   asymmetric: s = (max - min) / (2^b - 1), z = clamp(round(-min/s), 0, 2^b-1)
// The percentile rule swaps absmax for the q-th percentile of |x|, and the
// min-max pair for the (100-q)-th / q-th percentiles of x. Degenerate inputs
// (zero range) get scale = 1e-12 and z = 0. The scale mantissa is snapped to
// 37 significant bits so that integer-times-scale products stay exact for
// b <= 16, which is what makes fake_quantize bitwise idempotent.
QuantSpec compute_scale(std::span<const double> x, QuantScheme scheme, int bit_width,
                        const ScaleRule& rule = {});

// X_int = clamp(round(x / s) + z, qmin, qmax), round half to even.
QuantizedTensor quantize(const Tensor& x, const QuantSpec& spec);

// x_hat = (X_int - z) * s
Tensor dequantize(const QuantizedTensor& q);

// Fused quantize-then-dequantize into a raw buffer, no tape.
void fake_quantize_buffer(const double* x, double* y, std::int64_t n, const QuantSpec& spec);

// Tape op: forward is dequantize(quantize(x)) under a spec computed from x;
// backward is the straight-through identity into x. If used_spec is non-null
// it receives the grid actually applied.
Tensor fake_quantize(const Tensor& x, QuantScheme scheme, int bit_width,
                     const ScaleRule& rule = {}, QuantSpec* used_spec = nullptr);

// Per-example variant: row r of x [B x N] gets its own grid derived from that
// row's data at bits_per_row[r]. Backward is straight-through per row.
Tensor fake_quantize_rows(const Tensor& x, QuantScheme scheme,
                          const std::vector<int>& bits_per_row, const ScaleRule& rule = {},
                          std::vector<QuantSpec>* used_specs = nullptr);

// The differentiable bit-width site. Row r forwards the fake-quantized
// candidate picked by its one-hot selection row (bitwise equal to
// fake_quantize at the chosen width). Backward routes the upstream gradient
// straight through to x, and hands each selection row the inner products
// <upstream_r, candidate_i> so a policy upstream of the selection learns how
// every width option would have scored.
Tensor select_candidate_rows(const Tensor& x, const std::vector<Tensor>& selection_rows,
                             std::span<const int> options, QuantScheme scheme,
                             const ScaleRule& rule = {},
                             std::vector<QuantSpec>* used_specs = nullptr);

}  // namespace dptq
