#pragma once

// Shared test oracles: central finite differences against the tape, and
// generators that keep sampled points away from relu/hinge kinks so FD is
// well defined.

#include <cmath>
#include <functional>
#include <vector>

#include "dptq/rng.hpp"
#include "dptq/tensor.hpp"

namespace dptq::testsup {

struct FdReport {
    double max_rel = 0.0;  // worst |ad - fd| / max(|ad|, |fd|, floor)
    int checked = 0;
};

// f() must rebuild the scalar loss from the current leaf data on every call.
inline FdReport fd_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                         double h = 1e-5, double floor = 1e-3) {
    Tensor loss = f();
    for (auto& leaf : leaves) leaf.zero_grad();
    loss.backward();
    std::vector<std::vector<double>> ad;
    for (auto& leaf : leaves) ad.emplace_back(leaf.grad().begin(), leaf.grad().end());

    FdReport rep;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto data = leaves[li].mutable_data();
        for (std::size_t e = 0; e < data.size(); ++e) {
            const double keep = data[e];
            data[e] = keep + h;
            const double fp = f().item();
            data[e] = keep - h;
            const double fm = f().item();
            data[e] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = ad[li][e];
            const double rel = std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), floor});
            if (rel > rep.max_rel) rep.max_rel = rel;
            ++rep.checked;
        }
    }
    return rep;
}

// Values in +-[lo, hi], sign random. lo > 0 keeps data off kinks at 0.
inline Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = 0.1,
                            double hi = 2.0, bool requires_grad = true) {
    const std::int64_t n = numel_of(shape);
    std::vector<double> d(static_cast<std::size_t>(n));
    for (auto& v : d) {
        const double mag = uniform_range(rng, lo, hi);
        v = (rng() & 1) ? mag : -mag;
    }
    return Tensor::from_data(std::move(shape), std::move(d), requires_grad);
}

// Normal data guaranteed to straddle zero (first two entries pinned).
inline std::vector<double> straddling_data(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> d(n);
    for (auto& v : d) v = scale * normal_double(rng);
    d[0] = -scale * (0.5 + uniform_double(rng));
    if (n > 1) d[1] = scale * (0.5 + uniform_double(rng));
    return d;
}

}  // namespace dptq::testsup
