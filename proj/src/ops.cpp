#include "dptq/ops.hpp"

#include <cmath>
#include <string>

#include "dptq/kernels.hpp"

namespace dptq {

namespace {

Tensor make_node(std::vector<std::int64_t> shape, std::vector<double> data, const char* op,
                 bool record, std::vector<TensorImplPtr> parents, BackwardFn fn) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    if (record) {
        auto impl = out.impl();
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(fn);
        impl->op = op;
    }
    return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch");
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

void accumulate(std::span<double> dst, const double* src, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(static_cast<std::size_t>(m * n));
    kern::matmul(a.data().data(), b.data().data(), y.data(), m, k, n);

    const bool record = tape_should_record({&a, &b});
    auto ai = a.impl(), bi = b.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    return make_node({m, n}, std::move(y), "matmul", record, {ai, bi},
                     [ai, bi, m, k, n, need_a, need_b](const double* up, BackwardCtx& ctx) {
                         if (need_a)
                             kern::matmul_nt_acc(up, bi->data.data(), ctx.grad(ai).data(), m, k, n);
                         if (need_b)
                             kern::matmul_tn_acc(ai->data.data(), up, ctx.grad(bi).data(), m, k, n);
                     });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0))
        throw DimensionError("affine: incompatible shapes");
    if (b.numel() != w.dim(1)) throw DimensionError("affine: bias size mismatch");
    const std::int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    std::vector<double> y(static_cast<std::size_t>(m * n));
    kern::matmul_bias(x.data().data(), w.data().data(), b.data().data(), y.data(), m, k, n);

    const bool record = tape_should_record({&x, &w, &b});
    auto xi = x.impl(), wi = w.impl(), bi = b.impl();
    const bool need_x = x.requires_grad(), need_w = w.requires_grad(), need_b = b.requires_grad();
    return make_node({m, n}, std::move(y), "affine", record, {xi, wi, bi},
                     [xi, wi, bi, m, k, n, need_x, need_w, need_b](const double* up,
                                                                   BackwardCtx& ctx) {
                         if (need_x)
                             kern::matmul_nt_acc(up, wi->data.data(), ctx.grad(xi).data(), m, k, n);
                         if (need_w)
                             kern::matmul_tn_acc(xi->data.data(), up, ctx.grad(wi).data(), m, k, n);
                         if (need_b) kern::colsum_acc(up, ctx.grad(bi).data(), m, n);
                     });
}

namespace {

enum class BinKind { add, sub, mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    const bool sa = is_scalar(a), sb = is_scalar(b);
    if (!sa && !sb) check_same_shape(a, b, name);
    const Tensor& shaped = sa && !sb ? b : a;
    const std::int64_t n = shaped.numel();
    std::vector<double> y(static_cast<std::size_t>(n));

    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (!sa && !sb) {
        switch (kind) {
            case BinKind::add: kern::add(pa, pb, y.data(), n); break;
            case BinKind::sub: kern::sub(pa, pb, y.data(), n); break;
            case BinKind::mul: kern::mul(pa, pb, y.data(), n); break;
        }
    } else {
        for (std::int64_t i = 0; i < n; ++i) {
            const double va = sa ? pa[0] : pa[i];
            const double vb = sb ? pb[0] : pb[i];
            y[i] = kind == BinKind::add ? va + vb : kind == BinKind::sub ? va - vb : va * vb;
        }
    }

    const bool record = tape_should_record({&a, &b});
    auto ai = a.impl(), bi = b.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    return make_node(shaped.shape(), std::move(y), name, record, {ai, bi},
                     [ai, bi, n, sa, sb, kind, need_a, need_b](const double* up, BackwardCtx& ctx) {
                         if (need_a) {
                             auto ga = ctx.grad(ai);
                             for (std::int64_t i = 0; i < n; ++i) {
                                 double g = up[i];
                                 if (kind == BinKind::mul) g *= sb ? bi->data[0] : bi->data[i];
                                 ga[sa ? 0 : i] += g;
                             }
                         }
                         if (need_b) {
                             auto gb = ctx.grad(bi);
                             for (std::int64_t i = 0; i < n; ++i) {
                                 double g = up[i];
                                 if (kind == BinKind::mul) g *= sa ? ai->data[0] : ai->data[i];
                                 if (kind == BinKind::sub) g = -g;
                                 gb[sb ? 0 : i] += g;
                             }
                         }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::mul, "mul"); }

Tensor relu(const Tensor& x) {
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    kern::relu(x.data().data(), y.data(), n);
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node(x.shape(), std::move(y), "relu", record, {xi},
                     [xi, n](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i)
                             if (xi->data[i] > 0.0) gx[i] += up[i];
                     });
}

Tensor exp(const Tensor& x) {
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) y[i] = std::exp(x.data()[i]);
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    Tensor out = make_node(x.shape(), std::move(y), "exp", record, {xi}, nullptr);
    if (record) {
        auto oi = out.impl();
        std::weak_ptr<TensorImpl> ow = oi;
        oi->backward_fn = [xi, ow, n](const double* up, BackwardCtx& ctx) {
            auto self = ow.lock();
            auto gx = ctx.grad(xi);
            for (std::int64_t i = 0; i < n; ++i) gx[i] += up[i] * self->data[i];
        };
    }
    return out;
}

Tensor log(const Tensor& x) {
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        if (!(v > 0.0)) throw NumericError("log: non-positive input");
        y[i] = std::log(v);
    }
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node(x.shape(), std::move(y), "log", record, {xi},
                     [xi, n](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += up[i] / xi->data[i];
                     });
}

Tensor max_with_scalar(const Tensor& x, double c) {
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) y[i] = x.data()[i] > c ? x.data()[i] : c;
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node(x.shape(), std::move(y), "max_with_scalar", record, {xi},
                     [xi, n, c](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i)
                             if (xi->data[i] > c) gx[i] += up[i];
                     });
}

Tensor add_scalar(const Tensor& x, double c) {
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) y[i] = x.data()[i] + c;
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node(x.shape(), std::move(y), "add_scalar", record, {xi},
                     [xi, n](const double* up, BackwardCtx& ctx) {
                         accumulate(ctx.grad(xi), up, n);
                     });
}

Tensor scale(const Tensor& x, double c) {
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) y[i] = c * x.data()[i];
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node(x.shape(), std::move(y), "scale", record, {xi},
                     [xi, n, c](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += c * up[i];
                     });
}

Tensor sum(const Tensor& x) {
    const std::int64_t n = x.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += x.data()[i];
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node({1}, {acc}, "sum", record, {xi},
                     [xi, n](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += up[0];
                     });
}

Tensor mean(const Tensor& x) {
    const std::int64_t n = x.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += x.data()[i];
    const double inv = 1.0 / static_cast<double>(n);
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node({1}, {acc * inv}, "mean", record, {xi},
                     [xi, n, inv](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += up[0] * inv;
                     });
}

Tensor add_n(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("add_n: empty input list");
    const std::int64_t n = xs[0].numel();
    for (const Tensor& t : xs) check_same_shape(xs[0], t, "add_n");
    std::vector<double> y(xs[0].data().begin(), xs[0].data().end());
    for (std::size_t j = 1; j < xs.size(); ++j)
        for (std::int64_t i = 0; i < n; ++i) y[i] += xs[j].data()[i];

    bool record = false;
    std::vector<TensorImplPtr> parents;
    parents.reserve(xs.size());
    for (const Tensor& t : xs) {
        parents.push_back(t.impl());
        if (grad_enabled() && t.requires_grad()) record = true;
    }
    auto ps = parents;
    return make_node(xs[0].shape(), std::move(y), "add_n", record, std::move(parents),
                     [ps, n](const double* up, BackwardCtx& ctx) {
                         for (const auto& p : ps)
                             if (p->requires_grad) accumulate(ctx.grad(p), up, n);
                     });
}

Tensor softmax_with_temperature(const Tensor& x, double tau) {
    if (!(tau > 0.0)) throw ContractError("softmax_with_temperature: tau must be positive");
    if (x.ndim() > 2) throw DimensionError("softmax_with_temperature: 1-D or 2-D only");
    const std::int64_t rows = x.ndim() == 2 ? x.dim(0) : 1;
    const std::int64_t cols = x.ndim() == 2 ? x.dim(1) : x.numel();

    std::vector<double> y(static_cast<std::size_t>(rows * cols));
    const double* px = x.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * cols;
        double* yr = y.data() + r * cols;
        double m = xr[0];
        for (std::int64_t j = 1; j < cols; ++j) m = std::max(m, xr[j]);
        if (!std::isfinite(m)) throw NumericError("softmax_with_temperature: non-finite logits");
        double z = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            yr[j] = std::exp((xr[j] - m) / tau);
            z += yr[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) yr[j] /= z;
    }

    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    Tensor out = make_node(x.shape(), std::move(y), "softmax_t", record, {xi}, nullptr);
    if (record) {
        auto oi = out.impl();
        std::weak_ptr<TensorImpl> ow = oi;
        oi->backward_fn = [xi, ow, rows, cols, tau](const double* up, BackwardCtx& ctx) {
            auto self = ow.lock();
            auto gx = ctx.grad(xi);
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* pr = self->data.data() + r * cols;
                const double* gr = up + r * cols;
                double dot = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) dot += gr[j] * pr[j];
                for (std::int64_t j = 0; j < cols; ++j)
                    gx[r * cols + j] += pr[j] * (gr[j] - dot) / tau;
            }
        };
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape) {
    if (numel_of(shape) != x.numel()) throw DimensionError("reshape: numel mismatch");
    const std::int64_t n = x.numel();
    std::vector<double> y(x.data().begin(), x.data().end());
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node(std::move(shape), std::move(y), "reshape", record, {xi},
                     [xi, n](const double* up, BackwardCtx& ctx) {
                         accumulate(ctx.grad(xi), up, n);
                     });
}

Tensor take_row(const Tensor& x, std::int64_t row) {
    if (x.ndim() != 2) throw DimensionError("take_row: 2-D tensor required");
    if (row < 0 || row >= x.dim(0)) throw DimensionError("take_row: row out of range");
    const std::int64_t n = x.dim(1);
    std::vector<double> y(x.data().begin() + row * n, x.data().begin() + (row + 1) * n);
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node({n}, std::move(y), "take_row", record, {xi},
                     [xi, row, n](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::int64_t i = 0; i < n; ++i) gx[row * n + i] += up[i];
                     });
}

Tensor pick(const Tensor& x, std::int64_t index) {
    if (x.ndim() != 1) throw DimensionError("pick: 1-D tensor required");
    if (index < 0 || index >= x.numel()) throw DimensionError("pick: index out of range");
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    return make_node({1}, {x.data()[static_cast<std::size_t>(index)]}, "pick", record, {xi},
                     [xi, index](const double* up, BackwardCtx& ctx) {
                         ctx.grad(xi)[static_cast<std::size_t>(index)] += up[0];
                     });
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& col_per_row) {
    if (x.ndim() != 2) throw DimensionError("gather_cols: 2-D tensor required");
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    if (static_cast<std::int64_t>(col_per_row.size()) != rows)
        throw DimensionError("gather_cols: one column index per row required");
    std::vector<double> y(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const int c = col_per_row[static_cast<std::size_t>(r)];
        if (c < 0 || c >= cols) throw DimensionError("gather_cols: column out of range");
        y[static_cast<std::size_t>(r)] = x.data()[r * cols + c];
    }
    const bool record = tape_should_record({&x});
    auto xi = x.impl();
    auto idx = col_per_row;
    return make_node({rows}, std::move(y), "gather_cols", record, {xi},
                     [xi, idx, cols](const double* up, BackwardCtx& ctx) {
                         auto gx = ctx.grad(xi);
                         for (std::size_t r = 0; r < idx.size(); ++r)
                             gx[static_cast<std::int64_t>(r) * cols + idx[r]] += up[r];
                     });
}

Tensor ste_passthrough(const Tensor& forward_value, const Tensor& source) {
    check_same_shape(forward_value, source, "ste_passthrough");
    const std::int64_t n = source.numel();
    std::vector<double> y(forward_value.data().begin(), forward_value.data().end());
    const bool record = tape_should_record({&source});
    auto si = source.impl();
    return make_node(forward_value.shape(), std::move(y), "ste_passthrough", record, {si},
                     [si, n](const double* up, BackwardCtx& ctx) {
                         accumulate(ctx.grad(si), up, n);
                     });
}

}  // namespace dptq
