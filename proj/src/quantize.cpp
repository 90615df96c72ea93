#include "dptq/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "dptq/kernels.hpp"

namespace dptq {

namespace {

void check_bit_width(int b) {
    if (b < kMinBitWidth || b > kMaxBitWidth)
        throw ContractError("bit_width outside supported range [2, 24]");
}

// Round to 37 significant bits. Keeps (k - z) * scale exact for |k - z| up
// to 2^16, see compute_scale docs.
double snap_scale(double s) {
    int e = 0;
    const double m = std::frexp(s, &e);
    return std::ldexp(std::nearbyint(std::ldexp(m, 37)), e - 37);
}

// Linear-interpolation percentile of a sorted vector, q in [0, 100].
double percentile_sorted(const std::vector<double>& v, double q) {
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace

QuantSpec compute_scale(std::span<const double> x, QuantScheme scheme, int bit_width,
                        const ScaleRule& rule) {
    check_bit_width(bit_width);
    if (x.empty()) throw ContractError("compute_scale: empty tensor");
    if (rule.kind == ScaleRule::Kind::percentile && !(rule.q > 50.0 && rule.q <= 100.0))
        throw ContractError("compute_scale: percentile q must lie in (50, 100]");

    QuantSpec spec;
    spec.scheme = scheme;
    spec.bit_width = bit_width;

    if (scheme == QuantScheme::symmetric) {
        double a = 0.0;
        if (rule.kind == ScaleRule::Kind::percentile) {
            std::vector<double> mags(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) mags[i] = std::fabs(x[i]);
            std::sort(mags.begin(), mags.end());
            a = percentile_sorted(mags, rule.q);
        } else {
            a = kern::abs_max(x.data(), static_cast<std::int64_t>(x.size()));
        }
        const double levels = std::ldexp(1.0, bit_width - 1) - 1.0;
        spec.scale = a > 0.0 ? snap_scale(a / levels) : kQuantScaleEpsilon;
        spec.zero_point = 0.0;
        return spec;
    }

    double lo = 0.0, hi = 0.0;
    if (rule.kind == ScaleRule::Kind::percentile) {
        std::vector<double> sorted(x.begin(), x.end());
        std::sort(sorted.begin(), sorted.end());
        lo = percentile_sorted(sorted, 100.0 - rule.q);
        hi = percentile_sorted(sorted, rule.q);
    } else {
        kern::min_max(x.data(), static_cast<std::int64_t>(x.size()), &lo, &hi);
    }
    const double levels = std::ldexp(1.0, bit_width) - 1.0;
    const double range = hi - lo;
    if (range > 0.0) {
        spec.scale = snap_scale(range / levels);
        spec.zero_point = std::min(std::max(std::nearbyint(-lo / spec.scale), 0.0), levels);
    } else {
        spec.scale = kQuantScaleEpsilon;
        spec.zero_point = 0.0;
    }
    return spec;
}

QuantizedTensor quantize(const Tensor& x, const QuantSpec& spec) {
    check_bit_width(spec.bit_width);
    if (!(spec.scale > 0.0)) throw ContractError("quantize: scale must be positive");
    QuantizedTensor out;
    out.shape = x.shape();
    out.spec = spec;
    out.values.resize(static_cast<std::size_t>(x.numel()));
    const double qmin = spec.qmin(), qmax = spec.qmax(), z = spec.zero_point;
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        double q = std::nearbyint(xd[i] / spec.scale) + z;
        q = std::min(std::max(q, qmin), qmax);
        out.values[i] = static_cast<std::int32_t>(q);
    }
    return out;
}

Tensor dequantize(const QuantizedTensor& q) {
    std::vector<double> y(q.values.size());
    const double z = q.spec.zero_point, s = q.spec.scale;
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = (static_cast<double>(q.values[i]) - z) * s;
    return Tensor::from_data(q.shape, std::move(y));
}

void fake_quantize_buffer(const double* x, double* y, std::int64_t n, const QuantSpec& spec) {
    kern::fake_quant(x, y, n, spec.scale, spec.zero_point, spec.qmin(), spec.qmax());
}

Tensor fake_quantize(const Tensor& x, QuantScheme scheme, int bit_width, const ScaleRule& rule,
                     QuantSpec* used_spec) {
    const QuantSpec spec = compute_scale(x.data(), scheme, bit_width, rule);
    if (used_spec) *used_spec = spec;
    const std::int64_t n = x.numel();
    std::vector<double> y(static_cast<std::size_t>(n));
    fake_quantize_buffer(x.data().data(), y.data(), n, spec);

    Tensor out = Tensor::from_data(x.shape(), std::move(y));
    if (tape_should_record({&x})) {
        auto oi = out.impl();
        auto xi = x.impl();
        oi->requires_grad = true;
        oi->parents = {xi};
        oi->op = "fake_quantize";
        oi->backward_fn = [xi, n](const double* up, BackwardCtx& ctx) {
            auto gx = ctx.grad(xi);
            for (std::int64_t i = 0; i < n; ++i) gx[i] += up[i];
        };
    }
    return out;
}

Tensor fake_quantize_rows(const Tensor& x, QuantScheme scheme,
                          const std::vector<int>& bits_per_row, const ScaleRule& rule,
                          std::vector<QuantSpec>* used_specs) {
    if (x.ndim() != 2) throw DimensionError("fake_quantize_rows: expected [B x N]");
    const std::int64_t B = x.dim(0), N = x.dim(1);
    if (static_cast<std::int64_t>(bits_per_row.size()) != B)
        throw DimensionError("fake_quantize_rows: bits_per_row size must equal the batch");

    const auto xd = x.data();
    std::vector<double> y(static_cast<std::size_t>(B * N));
    if (used_specs) used_specs->resize(static_cast<std::size_t>(B));
    for (std::int64_t r = 0; r < B; ++r) {
        const double* row = xd.data() + r * N;
        const QuantSpec spec = compute_scale({row, static_cast<std::size_t>(N)}, scheme,
                                             bits_per_row[static_cast<std::size_t>(r)], rule);
        fake_quantize_buffer(row, y.data() + r * N, N, spec);
        if (used_specs) (*used_specs)[static_cast<std::size_t>(r)] = spec;
    }

    Tensor out = Tensor::from_data(x.shape(), std::move(y));
    if (tape_should_record({&x})) {
        auto oi = out.impl();
        auto xi = x.impl();
        oi->requires_grad = true;
        oi->parents = {xi};
        oi->op = "fake_quantize_rows";
        const std::int64_t n = B * N;
        oi->backward_fn = [xi, n](const double* up, BackwardCtx& ctx) {
            auto gx = ctx.grad(xi);
            for (std::int64_t i = 0; i < n; ++i) gx[i] += up[i];
        };
    }
    return out;
}

Tensor select_candidate_rows(const Tensor& x, const std::vector<Tensor>& selection_rows,
                             std::span<const int> options, QuantScheme scheme,
                             const ScaleRule& rule, std::vector<QuantSpec>* used_specs) {
    if (x.ndim() != 2) throw DimensionError("select_candidate_rows: expected [B x N]");
    const std::int64_t B = x.dim(0), N = x.dim(1);
    const std::int64_t O = static_cast<std::int64_t>(options.size());
    if (O < 1) throw ContractError("select_candidate_rows: empty option list");
    if (static_cast<std::int64_t>(selection_rows.size()) != B)
        throw DimensionError("select_candidate_rows: one selection row per example required");
    for (const Tensor& s : selection_rows)
        if (s.numel() != O)
            throw DimensionError("select_candidate_rows: selection row length must equal O");

    const auto xd = x.data();
    // candidates[r * O * N + i * N + ...]: fake-quantized row r at option i,
    // kept for the backward inner products.
    auto candidates = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * O * N));
    std::vector<double> y(static_cast<std::size_t>(B * N));
    if (used_specs) used_specs->resize(static_cast<std::size_t>(B));

    for (std::int64_t r = 0; r < B; ++r) {
        const double* row = xd.data() + r * N;
        const auto sel = selection_rows[static_cast<std::size_t>(r)].data();
        std::int64_t chosen = 0;
        for (std::int64_t i = 1; i < O; ++i)
            if (sel[static_cast<std::size_t>(i)] > sel[static_cast<std::size_t>(chosen)]) chosen = i;
        for (std::int64_t i = 0; i < O; ++i) {
            const QuantSpec spec = compute_scale({row, static_cast<std::size_t>(N)}, scheme,
                                                 options[static_cast<std::size_t>(i)], rule);
            fake_quantize_buffer(row, candidates->data() + (r * O + i) * N, N, spec);
            if (i == chosen && used_specs) (*used_specs)[static_cast<std::size_t>(r)] = spec;
        }
        const double* picked = candidates->data() + (r * O + chosen) * N;
        std::copy(picked, picked + N, y.data() + r * N);
    }

    std::initializer_list<const Tensor*> probe{&x};
    bool record = tape_should_record(probe);
    for (const Tensor& s : selection_rows) record = record || (grad_enabled() && s.requires_grad());

    Tensor out = Tensor::from_data(x.shape(), std::move(y));
    if (record) {
        auto oi = out.impl();
        auto xi = x.impl();
        std::vector<TensorImplPtr> sel_impls;
        sel_impls.reserve(selection_rows.size());
        for (const Tensor& s : selection_rows) sel_impls.push_back(s.impl());

        oi->requires_grad = true;
        oi->parents.push_back(xi);
        for (auto& si : sel_impls) oi->parents.push_back(si);
        oi->op = "select_candidate_rows";
        oi->backward_fn = [xi, sel_impls, candidates, B, O, N](const double* up,
                                                               BackwardCtx& ctx) {
            if (xi->requires_grad) {
                auto gx = ctx.grad(xi);
                for (std::int64_t i = 0; i < B * N; ++i) gx[i] += up[i];
            }
            for (std::int64_t r = 0; r < B; ++r) {
                const auto& si = sel_impls[static_cast<std::size_t>(r)];
                if (!si->requires_grad) continue;
                auto gs = ctx.grad(si);
                for (std::int64_t i = 0; i < O; ++i) {
                    const double* cand = candidates->data() + (r * O + i) * N;
                    double acc = 0.0;
                    for (std::int64_t nn = 0; nn < N; ++nn) acc += up[r * N + nn] * cand[nn];
                    gs[static_cast<std::size_t>(i)] += acc;
                }
            }
        };
    }
    return out;
}

}  // namespace dptq
