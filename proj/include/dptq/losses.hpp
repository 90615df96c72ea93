#pragma once

#include <span>
#include <vector>

#include "dptq/ops.hpp"

namespace dptq {

// KL(p_T || p_S) summed over classes; 2-D inputs are averaged over rows.
// Teacher terms with p_T(i) = 0 contribute zero, log p_S is floored at 1e-12.
// tau only documents the temperature both distributions were produced at; the
// divergence itself is temperature-free.
Tensor kd_loss(const Tensor& p_t, const Tensor& p_s, double tau);

// max(0, p(j) - p(i) + delta): quantized student should keep the teacher's
// argmax i ahead of the teacher's runner-up j.
Tensor hinge_robust(const Tensor& p_hat_s, int i, int j, double delta);

// max(0, p(i) - p(k) + delta): quantized student should push any other class
// k above the teacher's argmax i.
Tensor hinge_detrimental(const Tensor& p_hat_s, int i, int k, double delta);

// Row-wise versions, averaged over the batch.
Tensor hinge_robust_batch(const Tensor& p_hat_s, const std::vector<int>& i,
                          const std::vector<int>& j, double delta);
Tensor hinge_detrimental_batch(const Tensor& p_hat_s, const std::vector<int>& i,
                               const std::vector<int>& k, double delta);

// Mean negative log-likelihood of the labels under row softmax of the logits.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// lambda * x1 + (1 - lambda) * x2, a plain data transform (labels are never
// mixed; the teacher is queried on the mixed input instead).
Tensor mixup(const Tensor& x1, const Tensor& x2, double lambda);

int argmax_index(std::span<const double> v);
int argmax_excluding(std::span<const double> v, int excluded);
std::vector<int> argmax_rows(const Tensor& p);
std::vector<int> argmax_rows_excluding(const Tensor& p, const std::vector<int>& excluded);

}  // namespace dptq
