#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dptq/errors.hpp"
#include "dptq/losses.hpp"
#include "dptq/ops.hpp"
#include "support.hpp"

using namespace dptq;

namespace {

Tensor prob_row(std::vector<double> p) {
    const auto n = static_cast<std::int64_t>(p.size());
    return Tensor::from_data({n}, std::move(p));
}

// Plain-double KL(p||q) with the same 0 log 0 and 1e-12 floor conventions.
double kl_ref(const std::vector<double>& p, const std::vector<double>& q) {
    double out = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) out += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-12)));
    }
    return out;
}

}  // namespace

TEST_CASE("kd_loss matches a hand-rolled KL on single rows") {
    const std::vector<double> pt = {0.7, 0.3};
    const std::vector<double> ps = {0.5, 0.5};
    Tensor loss = kd_loss(prob_row(pt), prob_row(ps), 5.0);
    CHECK(loss.item() == doctest::Approx(kl_ref(pt, ps)).epsilon(1e-12));

    // Identical distributions: zero divergence.
    Tensor z = kd_loss(prob_row(pt), prob_row(pt), 5.0);
    CHECK(std::fabs(z.item()) < 1e-12);
}

TEST_CASE("kd_loss treats zero teacher mass as zero contribution") {
    const std::vector<double> pt = {1.0, 0.0};
    const std::vector<double> ps = {0.5, 0.5};
    Tensor loss = kd_loss(prob_row(pt), prob_row(ps), 5.0);
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kd_loss floors the student log at 1e-12") {
    const std::vector<double> pt = {0.5, 0.5};
    const std::vector<double> ps = {1.0, 0.0};
    Tensor loss = kd_loss(prob_row(pt), prob_row(ps), 5.0);
    CHECK(std::isfinite(loss.item()));
    CHECK(loss.item() == doctest::Approx(kl_ref(pt, ps)).epsilon(1e-12));
}

TEST_CASE("kd_loss on a batch is the mean of the per-row divergences") {
    const std::vector<double> pt1 = {0.6, 0.3, 0.1}, pt2 = {0.2, 0.2, 0.6};
    const std::vector<double> ps1 = {0.3, 0.4, 0.3}, ps2 = {0.5, 0.25, 0.25};
    Tensor pt = Tensor::from_data({2, 3}, {0.6, 0.3, 0.1, 0.2, 0.2, 0.6});
    Tensor ps = Tensor::from_data({2, 3}, {0.3, 0.4, 0.3, 0.5, 0.25, 0.25});
    Tensor loss = kd_loss(pt, ps, 5.0);
    const double want = 0.5 * (kl_ref(pt1, ps1) + kl_ref(pt2, ps2));
    CHECK(loss.item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("kd_loss input validation") {
    Tensor ok = prob_row({0.5, 0.5});
    CHECK_THROWS_AS(kd_loss(ok, ok, 0.0), ContractError);
    CHECK_THROWS_AS(kd_loss(ok, ok, -1.0), ContractError);
    CHECK_THROWS_AS(kd_loss(ok, prob_row({0.2, 0.3, 0.5}), 5.0), DimensionError);
    CHECK_THROWS_AS(kd_loss(prob_row({0.6, 0.3}), ok, 5.0), ContractError);   // sums to 0.9
    CHECK_THROWS_AS(kd_loss(prob_row({1.2, -0.2}), ok, 5.0), ContractError);  // negative entry
    CHECK_THROWS_AS(kd_loss(ok, prob_row({0.6, 0.5}), 5.0), ContractError);   // student checked too
}

TEST_CASE("kd_loss gradient through a softmax matches finite differences") {
    Rng rng(411);
    Tensor logits = testsup::random_tensor(rng, {3, 5}, 0.2, 1.5);
    Tensor pt = softmax_with_temperature(testsup::random_tensor(rng, {3, 5}, 0.2, 1.5, false), 1.0);
    auto f = [&]() { return kd_loss(pt, softmax_with_temperature(logits, 1.0), 5.0); };
    auto rep = testsup::fd_check(f, {logits});
    CHECK(rep.checked == 15);
    CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("hinge losses reproduce their closed forms") {
    Tensor p = prob_row({0.1, 0.6, 0.3});

    // Margin already satisfied: runner-up trails by more than delta.
    CHECK(hinge_robust(p, 1, 2, 0.01).item() == 0.0);
    // Violated by exactly 0.2 once delta outweighs the gap.
    CHECK(hinge_robust(p, 1, 2, 0.5).item() == doctest::Approx(0.2).epsilon(1e-15));

    // Detrimental wants class k above class i; here i leads by 0.5.
    CHECK(hinge_detrimental(p, 1, 0, 0.01).item() == doctest::Approx(0.51).epsilon(1e-15));
    CHECK(hinge_detrimental(prob_row({0.8, 0.1, 0.1}), 1, 0, 0.01).item() == 0.0);
}

TEST_CASE("batched hinges average the single-row values") {
    Tensor p = Tensor::from_data({2, 3}, {0.1, 0.6, 0.3, 0.5, 0.2, 0.3});
    const double r0 = hinge_robust(prob_row({0.1, 0.6, 0.3}), 1, 2, 0.4).item();
    const double r1 = hinge_robust(prob_row({0.5, 0.2, 0.3}), 0, 2, 0.4).item();
    CHECK(hinge_robust_batch(p, {1, 0}, {2, 2}, 0.4).item() ==
          doctest::Approx(0.5 * (r0 + r1)).epsilon(1e-15));

    const double d0 = hinge_detrimental(prob_row({0.1, 0.6, 0.3}), 1, 2, 0.01).item();
    const double d1 = hinge_detrimental(prob_row({0.5, 0.2, 0.3}), 0, 1, 0.01).item();
    CHECK(hinge_detrimental_batch(p, {1, 0}, {2, 1}, 0.01).item() ==
          doctest::Approx(0.5 * (d0 + d1)).epsilon(1e-15));
}

TEST_CASE("hinge validation") {
    Tensor p = prob_row({0.1, 0.6, 0.3});
    CHECK_THROWS_AS(hinge_robust(p, 1, 1, 0.01), ContractError);
    CHECK_THROWS_AS(hinge_robust(p, 3, 0, 0.01), ContractError);
    CHECK_THROWS_AS(hinge_robust(p, 0, -1, 0.01), ContractError);
    CHECK_THROWS_AS(hinge_robust(p, 0, 1, -0.1), ContractError);
    CHECK_THROWS_AS(hinge_detrimental(p, 2, 2, 0.01), ContractError);

    Tensor b = Tensor::from_data({2, 3}, {0.1, 0.6, 0.3, 0.5, 0.2, 0.3});
    CHECK_THROWS_AS(hinge_robust_batch(b, {1}, {2, 0}, 0.01), DimensionError);
    CHECK_THROWS_AS(hinge_robust_batch(b, {1, 0}, {1, 1}, 0.01), ContractError);
    CHECK_THROWS_AS(hinge_detrimental_batch(prob_row({0.5, 0.5}), {0}, {1}, 0.01),
                    DimensionError);
}

TEST_CASE("active hinges pass a finite-difference check through softmax") {
    Rng rng(877);
    Tensor logits = testsup::random_tensor(rng, {4, 6}, 0.2, 1.0);
    std::vector<int> i = {0, 1, 2, 3}, j = {5, 4, 3, 2};
    // Large delta keeps every row's hinge strictly active, away from the kink.
    auto f = [&]() {
        return hinge_robust_batch(softmax_with_temperature(logits, 1.0), i, j, 2.0);
    };
    auto rep = testsup::fd_check(f, {logits});
    CHECK(rep.max_rel < 1e-6);

    auto g = [&]() {
        return hinge_detrimental_batch(softmax_with_temperature(logits, 1.0), i, j, 2.0);
    };
    rep = testsup::fd_check(g, {logits});
    CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("cross_entropy equals the hand value and differentiates cleanly") {
    Tensor logits = Tensor::from_data({1, 2}, {0.0, 0.0});
    CHECK(cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor two = Tensor::from_data({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
    double want = 0.0;
    {
        const double z0 = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
        const double z1 = std::exp(-1.0) + std::exp(0.0) + std::exp(3.0);
        want = 0.5 * (-std::log(std::exp(2.0) / z0) - std::log(std::exp(3.0) / z1));
    }
    CHECK(cross_entropy(two, {1, 2}).item() == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy(two, {1}), DimensionError);
    CHECK_THROWS_AS(cross_entropy(prob_row({1.0, 2.0}), {0}), DimensionError);

    Rng rng(52);
    Tensor l = testsup::random_tensor(rng, {5, 4}, 0.2, 2.0);
    std::vector<int> labels = {0, 3, 1, 2, 2};
    auto f = [&]() { return cross_entropy(l, labels); };
    auto rep = testsup::fd_check(f, {l});
    CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("mixup is the exact convex combination") {
    Tensor a = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor b = Tensor::from_data({2, 2}, {5.0, 6.0, 7.0, 8.0});
    Tensor m = mixup(a, b, 0.25);
    const std::vector<double> want = {4.0, 5.0, 6.0, 7.0};
    for (int i = 0; i < 4; ++i)
        CHECK(m.data()[i] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-15));

    for (int i = 0; i < 4; ++i) CHECK(mixup(a, b, 1.0).data()[i] == a.data()[i]);
    for (int i = 0; i < 4; ++i) CHECK(mixup(a, b, 0.0).data()[i] == b.data()[i]);

    CHECK_THROWS_AS(mixup(a, b, 1.5), ContractError);
    CHECK_THROWS_AS(mixup(a, b, -0.1), ContractError);
    CHECK_THROWS_AS(mixup(a, Tensor::zeros({2, 3}), 0.5), DimensionError);
}

TEST_CASE("argmax helpers") {
    const std::vector<double> v = {1.0, 3.0, 3.0, 2.0};
    CHECK(argmax_index(v) == 1);  // ties resolve to the smallest index
    CHECK(argmax_excluding(v, 1) == 2);
    CHECK(argmax_excluding(v, 2) == 1);
    CHECK_THROWS_AS(argmax_index(std::span<const double>{}), ContractError);
    CHECK_THROWS_AS(argmax_excluding(std::span<const double>(v.data(), 1), 0), ContractError);
    CHECK_THROWS_AS(argmax_excluding(v, 7), ContractError);

    Tensor p = Tensor::from_data({2, 3}, {0.1, 0.6, 0.3, 0.5, 0.2, 0.3});
    CHECK(argmax_rows(p) == std::vector<int>{1, 0});
    CHECK(argmax_rows(prob_row({0.2, 0.8})) == std::vector<int>{1});
    CHECK(argmax_rows_excluding(p, {1, 0}) == std::vector<int>{2, 2});
    CHECK_THROWS_AS(argmax_rows_excluding(p, {1}), DimensionError);
}
