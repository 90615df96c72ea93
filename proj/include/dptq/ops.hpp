#pragma once

#include <vector>

#include "dptq/tensor.hpp"

// Differentiable op set. Elementwise binary ops accept equal shapes or a
// scalar (1-element tensor) on either side; nothing fancier. ReLU gradient is
// 0 at exactly 0. softmax subtracts the row max before exponentiation.

namespace dptq {

Tensor matmul(const Tensor& a, const Tensor& b);
// x[m x k] * w[k x n] + b[n] broadcast over rows
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // throws NumericError on non-positive input
Tensor max_with_scalar(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor add_n(const std::vector<Tensor>& xs);

// 1-D tensors are one row; 2-D tensors are treated row-wise.
Tensor softmax_with_temperature(const Tensor& x, double tau);

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape);
Tensor take_row(const Tensor& x, std::int64_t row);  // [B x N] -> [N]
Tensor pick(const Tensor& x, std::int64_t index);    // 1-D -> scalar
// out[r] = x[r, col_per_row[r]]
Tensor gather_cols(const Tensor& x, const std::vector<int>& col_per_row);

// Forward takes forward_value's data verbatim; backward routes the gradient
// to source unchanged (identity Jacobian). forward_value never joins the tape.
Tensor ste_passthrough(const Tensor& forward_value, const Tensor& source);

}  // namespace dptq
