#include "dptq/losses.hpp"

#include <cmath>
#include <string>

#include "dptq/errors.hpp"

namespace dptq {

namespace {

constexpr double kLogFloor = 1e-12;

void check_probability_rows(const Tensor& p, const char* what) {
    if (p.ndim() != 1 && p.ndim() != 2)
        throw DimensionError(std::string(what) + ": 1-D or 2-D tensor required");
    const std::int64_t cols = p.dim(p.ndim() - 1);
    const std::int64_t rows = p.numel() / cols;
    if (cols < 2) throw ContractError(std::string(what) + ": at least two classes required");
    for (std::int64_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double v = p.data()[r * cols + c];
            if (!std::isfinite(v) || v < 0.0)
                throw ContractError(std::string(what) + ": entries must be finite and nonnegative");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ContractError(std::string(what) + ": row " + std::to_string(r) +
                                " sums to " + std::to_string(sum) + ", not 1");
    }
}

void check_hinge_args(const Tensor& p, int a, int b, double delta, const char* what) {
    check_probability_rows(p, what);
    if (p.ndim() != 1) throw DimensionError(std::string(what) + ": single distribution required");
    const int k = static_cast<int>(p.numel());
    if (a < 0 || a >= k || b < 0 || b >= k)
        throw ContractError(std::string(what) + ": class index out of range");
    if (a == b) throw ContractError(std::string(what) + ": the two classes must differ");
    if (!(delta >= 0.0)) throw ContractError(std::string(what) + ": margin must be nonnegative");
}

void check_hinge_batch_args(const Tensor& p, const std::vector<int>& a, const std::vector<int>& b,
                            double delta, const char* what) {
    check_probability_rows(p, what);
    if (p.ndim() != 2) throw DimensionError(std::string(what) + ": 2-D batch required");
    const std::size_t rows = static_cast<std::size_t>(p.dim(0));
    const int k = static_cast<int>(p.dim(1));
    if (a.size() != rows || b.size() != rows)
        throw DimensionError(std::string(what) + ": one class pair per row required");
    for (std::size_t r = 0; r < rows; ++r) {
        if (a[r] < 0 || a[r] >= k || b[r] < 0 || b[r] >= k)
            throw ContractError(std::string(what) + ": class index out of range");
        if (a[r] == b[r]) throw ContractError(std::string(what) + ": the two classes must differ");
    }
    if (!(delta >= 0.0)) throw ContractError(std::string(what) + ": margin must be nonnegative");
}

}  // namespace

Tensor kd_loss(const Tensor& p_t, const Tensor& p_s, double tau) {
    if (!(tau > 0.0)) throw ContractError("kd_loss: temperature must be positive");
    if (p_t.shape() != p_s.shape()) throw DimensionError("kd_loss: shape mismatch");
    check_probability_rows(p_t, "kd_loss teacher");
    check_probability_rows(p_s, "kd_loss student");
    const std::int64_t cols = p_t.dim(p_t.ndim() - 1);
    const std::int64_t rows = p_t.numel() / cols;

    // The teacher side is a constant: sum p_T log p_T with 0 log 0 = 0.
    double teacher_term = 0.0;
    for (std::int64_t i = 0; i < p_t.numel(); ++i) {
        const double v = p_t.data()[i];
        if (v > 0.0) teacher_term += v * std::log(v);
    }
    teacher_term /= static_cast<double>(rows);

    Tensor log_ps = log(max_with_scalar(p_s, kLogFloor));
    Tensor cross = scale(sum(mul(p_t.detach(), log_ps)), 1.0 / static_cast<double>(rows));
    return add_scalar(scale(cross, -1.0), teacher_term);
}

Tensor hinge_robust(const Tensor& p_hat_s, int i, int j, double delta) {
    check_hinge_args(p_hat_s, i, j, delta, "hinge_robust");
    Tensor gap = sub(pick(p_hat_s, j), pick(p_hat_s, i));
    return max_with_scalar(add_scalar(gap, delta), 0.0);
}

Tensor hinge_detrimental(const Tensor& p_hat_s, int i, int k, double delta) {
    check_hinge_args(p_hat_s, i, k, delta, "hinge_detrimental");
    Tensor gap = sub(pick(p_hat_s, i), pick(p_hat_s, k));
    return max_with_scalar(add_scalar(gap, delta), 0.0);
}

Tensor hinge_robust_batch(const Tensor& p_hat_s, const std::vector<int>& i,
                          const std::vector<int>& j, double delta) {
    check_hinge_batch_args(p_hat_s, i, j, delta, "hinge_robust_batch");
    Tensor gap = sub(gather_cols(p_hat_s, j), gather_cols(p_hat_s, i));
    return mean(max_with_scalar(add_scalar(gap, delta), 0.0));
}

Tensor hinge_detrimental_batch(const Tensor& p_hat_s, const std::vector<int>& i,
                               const std::vector<int>& k, double delta) {
    check_hinge_batch_args(p_hat_s, i, k, delta, "hinge_detrimental_batch");
    Tensor gap = sub(gather_cols(p_hat_s, i), gather_cols(p_hat_s, k));
    return mean(max_with_scalar(add_scalar(gap, delta), 0.0));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy: 2-D logits required");
    if (static_cast<std::int64_t>(labels.size()) != logits.dim(0))
        throw DimensionError("cross_entropy: one label per row required");
    Tensor log_p = log(max_with_scalar(softmax_with_temperature(logits, 1.0), kLogFloor));
    return scale(mean(gather_cols(log_p, labels)), -1.0);
}

Tensor mixup(const Tensor& x1, const Tensor& x2, double lambda) {
    if (x1.shape() != x2.shape()) throw DimensionError("mixup: shape mismatch");
    if (!std::isfinite(lambda) || lambda < 0.0 || lambda > 1.0)
        throw ContractError("mixup: lambda must lie in [0, 1]");
    return add(scale(x1, lambda), scale(x2, 1.0 - lambda));
}

int argmax_index(std::span<const double> v) {
    if (v.empty()) throw ContractError("argmax_index: empty input");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

int argmax_excluding(std::span<const double> v, int excluded) {
    if (v.size() < 2) throw ContractError("argmax_excluding: at least two entries required");
    if (excluded < 0 || excluded >= static_cast<int>(v.size()))
        throw ContractError("argmax_excluding: excluded index out of range");
    int best = -1;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        if (i == excluded) continue;
        if (best < 0 || v[i] > v[best]) best = i;
    }
    return best;
}

std::vector<int> argmax_rows(const Tensor& p) {
    if (p.ndim() != 1 && p.ndim() != 2) throw DimensionError("argmax_rows: 1-D or 2-D required");
    const std::int64_t cols = p.dim(p.ndim() - 1);
    const std::int64_t rows = p.numel() / cols;
    std::vector<int> out(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r)
        out[static_cast<std::size_t>(r)] = argmax_index(
            p.data().subspan(static_cast<std::size_t>(r * cols), static_cast<std::size_t>(cols)));
    return out;
}

std::vector<int> argmax_rows_excluding(const Tensor& p, const std::vector<int>& excluded) {
    if (p.ndim() != 2) throw DimensionError("argmax_rows_excluding: 2-D required");
    const std::int64_t cols = p.dim(1);
    if (static_cast<std::int64_t>(excluded.size()) != p.dim(0))
        throw DimensionError("argmax_rows_excluding: one excluded index per row required");
    std::vector<int> out(excluded.size());
    for (std::size_t r = 0; r < excluded.size(); ++r)
        out[r] = argmax_excluding(
            p.data().subspan(r * static_cast<std::size_t>(cols), static_cast<std::size_t>(cols)),
            excluded[r]);
    return out;
}

}  // namespace dptq
