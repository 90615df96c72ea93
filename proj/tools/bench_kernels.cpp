// Compares the OpenMP kernels against the serial reference loops: verifies
// bitwise agreement, then times both on the shapes the training loop actually
// hits. Run with OMP_NUM_THREADS set to taste.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dptq/kernels.hpp"
#include "dptq/rng.hpp"

using namespace dptq;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_buffer(Rng& rng, std::int64_t n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = normal_double(rng);
    return v;
}

template <class F>
double time_of(F&& f, int reps) {
    // One warmup, then best-of-reps.
    f();
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        f();
        auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP; parallel entry points run serially\n");
#endif

    Rng rng(12345);
    const int reps = 20;
    bool all_match = true;

    struct Shape {
        std::int64_t m, k, n;
    };
    // Batch x in x out shapes from teacher (128), pair (64) and eval (256).
    const Shape shapes[] = {{128, 32, 64}, {64, 64, 64}, {256, 64, 64}, {256, 64, 10}};

    std::printf("\n%-28s %12s %12s %9s\n", "kernel", "serial (us)", "openmp (us)", "speedup");
    for (const Shape& s : shapes) {
        auto a = random_buffer(rng, s.m * s.k);
        auto b = random_buffer(rng, s.k * s.n);
        auto bias = random_buffer(rng, s.n);
        std::vector<double> y1(static_cast<std::size_t>(s.m * s.n));
        std::vector<double> y2(y1.size());

        kern::serial::matmul_bias(a.data(), b.data(), bias.data(), y1.data(), s.m, s.k, s.n);
        kern::matmul_bias(a.data(), b.data(), bias.data(), y2.data(), s.m, s.k, s.n);
        all_match = all_match && bitwise_equal(y1, y2);

        const double ts = time_of(
            [&] { kern::serial::matmul_bias(a.data(), b.data(), bias.data(), y1.data(), s.m, s.k, s.n); },
            reps);
        const double tp = time_of(
            [&] { kern::matmul_bias(a.data(), b.data(), bias.data(), y2.data(), s.m, s.k, s.n); },
            reps);
        char name[64];
        std::snprintf(name, sizeof name, "matmul_bias %lldx%lldx%lld", (long long)s.m,
                      (long long)s.k, (long long)s.n);
        std::printf("%-28s %12.1f %12.1f %8.2fx\n", name, ts * 1e6, tp * 1e6, ts / tp);
    }

    {
        const std::int64_t m = 64, k = 64, n = 64;
        auto g = random_buffer(rng, m * n);
        auto b = random_buffer(rng, k * n);
        auto a = random_buffer(rng, m * k);
        std::vector<double> y1(static_cast<std::size_t>(m * k)), y2(y1.size());
        kern::serial::matmul_nt_acc(g.data(), b.data(), y1.data(), m, k, n);
        kern::matmul_nt_acc(g.data(), b.data(), y2.data(), m, k, n);
        all_match = all_match && bitwise_equal(y1, y2);
        const double ts =
            time_of([&] { kern::serial::matmul_nt_acc(g.data(), b.data(), y1.data(), m, k, n); }, reps);
        const double tp =
            time_of([&] { kern::matmul_nt_acc(g.data(), b.data(), y2.data(), m, k, n); }, reps);
        std::printf("%-28s %12.1f %12.1f %8.2fx\n", "matmul_nt_acc 64x64x64", ts * 1e6, tp * 1e6,
                    ts / tp);

        std::vector<double> w1(static_cast<std::size_t>(k * n)), w2(w1.size());
        kern::serial::matmul_tn_acc(a.data(), g.data(), w1.data(), m, k, n);
        kern::matmul_tn_acc(a.data(), g.data(), w2.data(), m, k, n);
        all_match = all_match && bitwise_equal(w1, w2);
        const double ts2 =
            time_of([&] { kern::serial::matmul_tn_acc(a.data(), g.data(), w1.data(), m, k, n); }, reps);
        const double tp2 =
            time_of([&] { kern::matmul_tn_acc(a.data(), g.data(), w2.data(), m, k, n); }, reps);
        std::printf("%-28s %12.1f %12.1f %8.2fx\n", "matmul_tn_acc 64x64x64", ts2 * 1e6, tp2 * 1e6,
                    ts2 / tp2);
    }

    {
        const std::int64_t n = 1 << 20;
        auto x = random_buffer(rng, n);
        std::vector<double> y1(static_cast<std::size_t>(n)), y2(y1.size());
        kern::serial::fake_quant(x.data(), y1.data(), n, 0.01, 3.0, 0.0, 255.0);
        kern::fake_quant(x.data(), y2.data(), n, 0.01, 3.0, 0.0, 255.0);
        all_match = all_match && bitwise_equal(y1, y2);
        const double ts = time_of(
            [&] { kern::serial::fake_quant(x.data(), y1.data(), n, 0.01, 3.0, 0.0, 255.0); }, reps);
        const double tp =
            time_of([&] { kern::fake_quant(x.data(), y2.data(), n, 0.01, 3.0, 0.0, 255.0); }, reps);
        std::printf("%-28s %12.1f %12.1f %8.2fx\n", "fake_quant 1M", ts * 1e6, tp * 1e6, ts / tp);

        const double ts2 = time_of([&] { (void)kern::serial::abs_max(x.data(), n); }, reps);
        const double tp2 = time_of([&] { (void)kern::abs_max(x.data(), n); }, reps);
        std::printf("%-28s %12.1f %12.1f %8.2fx\n", "abs_max 1M", ts2 * 1e6, tp2 * 1e6, ts2 / tp2);
    }

    std::printf("\nbitwise agreement: %s\n", all_match ? "yes" : "NO");
    return all_match ? 0 : 1;
}
