#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dptq/errors.hpp"
#include "dptq/losses.hpp"
#include "dptq/mckp.hpp"
#include "dptq/networks.hpp"
#include "dptq/ops.hpp"
#include "dptq/quantize.hpp"
#include "support.hpp"

using namespace dptq;

namespace {

NetSpec tiny_spec() {
    NetSpec s;
    s.input_dim = 4;
    s.num_classes = 3;
    s.hidden = {6, 5};
    return s;
}

Tensor straddle_matrix(Rng& rng, std::int64_t rows, std::int64_t cols, double scale = 1.0) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(rows * cols));
    for (std::int64_t r = 0; r < rows; ++r) {
        auto row = testsup::straddling_data(rng, static_cast<std::size_t>(cols), scale);
        d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor::from_data({rows, cols}, std::move(d));
}

// Per-example [L x O] logit matrices for the allocator, sliced out of a
// policy-shaped [B x L*O] tensor.
std::vector<Allocation> allocations_for(const Tensor& policy_out, std::span<const int> options,
                                        std::int64_t budget, int layers) {
    std::vector<Allocation> out;
    const int o = static_cast<int>(options.size());
    for (std::int64_t b = 0; b < policy_out.dim(0); ++b) {
        Tensor logits = reshape(take_row(policy_out, b), {layers, o});
        out.push_back(allocate_bitwidths(logits, options, budget));
    }
    return out;
}

}  // namespace

TEST_CASE("classifier init is seed-deterministic and clone is bitwise") {
    Rng r1(19), r2(19), r3(20);
    auto a = init_classifier(tiny_spec(), r1);
    auto b = init_classifier(tiny_spec(), r2);
    auto c = init_classifier(tiny_spec(), r3);
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
        CHECK(std::equal(a.weights[i].data().begin(), a.weights[i].data().end(),
                         b.weights[i].data().begin()));
    }
    CHECK(a.weights[0].data()[0] != c.weights[0].data()[0]);

    auto d = a.clone();
    Rng rx(5);
    Tensor x = straddle_matrix(rx, 3, 4);
    Tensor ya = forward_full_precision(a, x);
    Tensor yd = forward_full_precision(d, x);
    REQUIRE(ya.shape() == std::vector<std::int64_t>{3, 3});
    CHECK(std::equal(ya.data().begin(), ya.data().end(), yd.data().begin()));

    // Deep copy: edits to the clone leave the original untouched.
    d.weights[0].mutable_data()[0] += 1.0;
    CHECK(a.weights[0].data()[0] != d.weights[0].data()[0]);
}

TEST_CASE("24-bit quantization everywhere is a numerical no-op") {
    Rng rng(31);
    NoGradGuard guard;

    // Shallow net: the per-site rounding error barely compounds.
    auto small = init_classifier(tiny_spec(), rng);
    small.set_trainable(false);
    Tensor xs = straddle_matrix(rng, 4, 4);
    Tensor fp_s = forward_full_precision(small, xs);
    QuantizeOptions qopt;
    qopt.weight_bits = 24;
    std::vector<std::vector<int>> gamma_s(4, std::vector<int>(2, 24));
    Tensor q_s = forward_quantized(small, xs, gamma_s, qopt);
    double worst = 0.0;
    for (std::size_t i = 0; i < fp_s.data().size(); ++i)
        worst = std::max(worst, std::fabs(fp_s.data()[i] - q_s.data()[i]));
    CHECK(worst < 1e-5);

    // Default 8x64 stack: eight layers of amplification, still tiny.
    auto net = init_classifier({}, rng);
    net.set_trainable(false);
    Tensor x = straddle_matrix(rng, 4, 32);
    Tensor fp = forward_full_precision(net, x);
    std::vector<std::vector<int>> gamma(4, std::vector<int>(8, 24));
    Tensor q = forward_quantized(net, x, gamma, qopt);
    worst = 0.0;
    for (std::size_t i = 0; i < fp.data().size(); ++i)
        worst = std::max(worst, std::fabs(fp.data()[i] - q.data()[i]));
    CHECK(worst < 1e-3);
}

TEST_CASE("quantized forward traces every site") {
    Rng rng(77);
    auto net = init_classifier(tiny_spec(), rng);
    net.set_trainable(false);
    Tensor x = straddle_matrix(rng, 3, 4);
    std::vector<std::vector<int>> gamma = {{2, 4}, {3, 2}, {8, 16}};

    NoGradGuard guard;
    QuantForwardTrace trace;
    forward_quantized(net, x, gamma, {}, &trace);
    CHECK(trace.batch == 3);
    REQUIRE(trace.site_width.size() == 2);
    CHECK(trace.site_width[0] == 6);
    CHECK(trace.site_width[1] == 5);
    CHECK(trace.gamma == gamma);
    REQUIRE(trace.specs.size() == 2);
    CHECK(trace.specs[0].size() == 3);
    CHECK(trace.specs[0][0].bit_width == 2);
    CHECK(trace.specs[1][2].bit_width == 16);
    CHECK(trace.pre_activations[0].size() == 3 * 6);
    CHECK(trace.post_activations[1].size() == 3 * 5);

    // Coarse grids must actually move values; of the 2-bit rows at least one
    // entry should change unless the row was exactly representable.
    bool moved = false;
    for (std::size_t i = 0; i < trace.pre_activations[0].size(); ++i)
        if (trace.pre_activations[0][i] != trace.post_activations[0][i]) moved = true;
    CHECK(moved);
}

TEST_CASE("inactive sites pass activations through untouched") {
    Rng rng(78);
    auto net = init_classifier(tiny_spec(), rng);
    net.set_trainable(false);
    Tensor x = straddle_matrix(rng, 2, 4);
    std::vector<std::vector<int>> gamma = {{2, 2}, {2, 2}};

    NoGradGuard guard;
    QuantizeOptions all_off;
    all_off.active_sites = {0, 0};
    QuantForwardTrace trace;
    forward_quantized(net, x, gamma, all_off, &trace);
    for (int site = 0; site < 2; ++site) {
        CHECK(trace.pre_activations[static_cast<std::size_t>(site)] ==
              trace.post_activations[static_cast<std::size_t>(site)]);
        CHECK(trace.specs[static_cast<std::size_t>(site)].empty());
    }

    QuantizeOptions bad;
    bad.active_sites = {1};
    CHECK_THROWS_AS(forward_quantized(net, x, gamma, bad), ContractError);
}

TEST_CASE("gamma validation in the quantized forward") {
    Rng rng(79);
    auto net = init_classifier(tiny_spec(), rng);
    net.set_trainable(false);
    Tensor x = straddle_matrix(rng, 2, 4);
    NoGradGuard guard;

    CHECK_THROWS_AS(forward_quantized(net, x, {{4, 4}}, {}), ContractError);  // one per example
    CHECK_THROWS_AS(forward_quantized(net, x, {{4}, {4, 4}}, {}), ContractError);
    CHECK_THROWS_AS(forward_quantized(net, x, {{4, 1}, {4, 4}}, {}), ContractError);
    CHECK_THROWS_AS(forward_quantized(net, x, {{4, 25}, {4, 4}}, {}), ContractError);

    QuantizeOptions qopt;
    qopt.options = {4, 6, 8};
    CHECK_THROWS_AS(forward_quantized(net, x, {{4, 5}, {4, 4}}, qopt), ContractError);
    CHECK_NOTHROW(forward_quantized(net, x, {{4, 6}, {8, 4}}, qopt));

    qopt.weight_bits = 1;
    CHECK_THROWS_AS(forward_quantized(net, x, {{4, 6}, {8, 4}}, qopt), ContractError);
}

TEST_CASE("fake_quantize_rows equals fake_quantize applied row by row") {
    Rng rng(101);
    Tensor x = straddle_matrix(rng, 3, 8);
    std::vector<int> bits = {2, 8, 16};

    for (auto scheme : {QuantScheme::symmetric, QuantScheme::asymmetric}) {
        std::vector<QuantSpec> specs;
        Tensor y = fake_quantize_rows(x, scheme, bits, {}, &specs);
        REQUIRE(specs.size() == 3);
        for (std::int64_t r = 0; r < 3; ++r) {
            auto row = x.data().subspan(static_cast<std::size_t>(r) * 8, 8);
            Tensor rt = Tensor::from_data({8}, {row.begin(), row.end()});
            QuantSpec single;
            Tensor yr = fake_quantize(rt, scheme, bits[static_cast<std::size_t>(r)], {}, &single);
            CHECK(single.scale == specs[static_cast<std::size_t>(r)].scale);
            CHECK(single.zero_point == specs[static_cast<std::size_t>(r)].zero_point);
            for (int c = 0; c < 8; ++c)
                CHECK(y.data()[static_cast<std::size_t>(r * 8 + c)] ==
                      yr.data()[static_cast<std::size_t>(c)]);
        }
    }

    CHECK_THROWS_AS(fake_quantize_rows(x, QuantScheme::symmetric, {2, 8}), DimensionError);
    CHECK_THROWS_AS(fake_quantize_rows(Tensor::zeros({4}), QuantScheme::symmetric, {2}),
                    DimensionError);
}

TEST_CASE("fake_quantize_rows backward is the straight-through identity") {
    Rng rng(102);
    Tensor x = straddle_matrix(rng, 2, 5);
    x.set_requires_grad(true);
    Tensor loss = sum(fake_quantize_rows(x, QuantScheme::asymmetric, {2, 4}));
    loss.backward();
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("select_candidate_rows forwards the chosen grid bitwise") {
    Rng rng(103);
    Tensor x = straddle_matrix(rng, 2, 6);
    const std::vector<int> options = {2, 4, 8};
    std::vector<Tensor> sel = {Tensor::from_data({3}, {0.0, 1.0, 0.0}),
                               Tensor::from_data({3}, {0.0, 0.0, 1.0})};
    std::vector<QuantSpec> specs;
    Tensor y = select_candidate_rows(x, sel, options, QuantScheme::asymmetric, {}, &specs);
    Tensor want = fake_quantize_rows(x, QuantScheme::asymmetric, {4, 8});
    CHECK(std::equal(y.data().begin(), y.data().end(), want.data().begin()));
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].bit_width == 4);
    CHECK(specs[1].bit_width == 8);

    CHECK_THROWS_AS(select_candidate_rows(x, {sel[0]}, options, QuantScheme::asymmetric),
                    DimensionError);
    std::vector<Tensor> short_rows = {Tensor::zeros({2}), Tensor::zeros({2})};
    CHECK_THROWS_AS(select_candidate_rows(x, short_rows, options, QuantScheme::asymmetric),
                    DimensionError);
}

TEST_CASE("select_candidate_rows hands each option its candidate inner product") {
    Rng rng(104);
    Tensor x = straddle_matrix(rng, 2, 6);
    const std::vector<int> options = {2, 4, 8};
    std::vector<Tensor> sel = {Tensor::from_data({3}, {0.0, 1.0, 0.0}, true),
                               Tensor::from_data({3}, {0.0, 0.0, 1.0}, true)};
    x.set_requires_grad(true);

    Tensor loss = sum(select_candidate_rows(x, sel, options, QuantScheme::asymmetric));
    loss.backward();

    // Straight-through into the activations.
    for (double g : x.grad()) CHECK(g == 1.0);

    // Upstream of the sum is all ones, so each option's gradient is the plain
    // sum of its fake-quantized candidate row.
    for (std::size_t r = 0; r < 2; ++r) {
        auto row = x.data().subspan(r * 6, 6);
        for (std::size_t i = 0; i < options.size(); ++i) {
            QuantSpec spec = compute_scale(row, QuantScheme::asymmetric, options[i]);
            std::vector<double> cand(6);
            fake_quantize_buffer(row.data(), cand.data(), 6, spec);
            double want = 0.0;
            for (double v : cand) want += v;
            CHECK(sel[r].grad()[i] == doctest::Approx(want).epsilon(1e-15));
        }
    }
}

TEST_CASE("coupled forward is bitwise equal to the fixed-gamma forward") {
    Rng rng(105);
    auto net = init_classifier(tiny_spec(), rng);
    net.set_trainable(false);
    Tensor x = straddle_matrix(rng, 3, 4);
    const std::vector<int> options = {2, 4, 8};

    PolicySpec pspec;
    pspec.input_dim = 4;
    pspec.layers = 2;
    pspec.options = 3;
    auto policy = init_policy(pspec, rng);
    policy.set_trainable(false);

    NoGradGuard guard;
    Tensor pol = policy_forward(policy, x);
    auto allocs = allocations_for(pol, options, 12, 2);
    std::vector<std::vector<int>> gamma;
    for (const auto& a : allocs) gamma.push_back(a.gamma);

    QuantizeOptions qopt;
    qopt.options = options;
    Tensor via_gamma = forward_quantized(net, x, gamma, qopt);
    Tensor coupled = forward_quantized_coupled(net, x, allocs, qopt);
    CHECK(std::equal(via_gamma.data().begin(), via_gamma.data().end(), coupled.data().begin()));

    QuantizeOptions no_opts;
    CHECK_THROWS_AS(forward_quantized_coupled(net, x, allocs, no_opts), ContractError);
}

TEST_CASE("hinge gradients reach both the student and the policy head") {
    Rng rng(106);
    auto net = init_classifier(tiny_spec(), rng);
    PolicySpec pspec;
    pspec.input_dim = 4;
    pspec.layers = 2;
    pspec.options = 3;
    pspec.hidden = {8};
    auto policy = init_policy(pspec, rng);
    const std::vector<int> options = {2, 4, 8};

    Tensor x = straddle_matrix(rng, 4, 4);
    Tensor pol = policy_forward(policy, x);
    auto allocs = allocations_for(pol, options, 12, 2);

    QuantizeOptions qopt;
    qopt.options = options;
    Tensor logits = forward_quantized_coupled(net, x, allocs, qopt);
    Tensor p = softmax_with_temperature(logits, 1.0);
    std::vector<int> top = argmax_rows(p);
    std::vector<int> runner = argmax_rows_excluding(p, top);
    Tensor loss = hinge_robust_batch(p, top, runner, 2.0);  // margin keeps every row active
    loss.backward();

    auto nonzero = [](const Tensor& t) {
        for (double g : t.grad())
            if (g != 0.0) return true;
        return false;
    };
    CHECK(nonzero(net.weights[0]));
    CHECK(nonzero(net.weights[2]));
    bool policy_touched = false;
    for (const auto& w : policy.weights) policy_touched = policy_touched || nonzero(w);
    CHECK(policy_touched);
}

TEST_CASE("policy head emits one logit matrix per example") {
    Rng rng(107);
    PolicySpec pspec;
    pspec.input_dim = 6;
    pspec.layers = 3;
    pspec.options = 4;
    auto policy = init_policy(pspec, rng);
    Tensor x = straddle_matrix(rng, 5, 6);
    Tensor out = policy_forward(policy, x);
    CHECK(out.shape() == std::vector<std::int64_t>{5, 12});
    CHECK_THROWS_AS(policy_forward(policy, straddle_matrix(rng, 5, 7)), DimensionError);

    PolicySpec bad = pspec;
    bad.options = 1;
    Rng r2(1);
    CHECK_THROWS_AS(init_policy(bad, r2), ConfigError);
}

TEST_CASE("black box hands out detached temperature-1 softmax only") {
    Rng rng(108);
    auto net = init_classifier(tiny_spec(), rng);
    auto reference = net.clone();
    BlackBoxHandle box(std::move(net));
    CHECK(box.input_dim() == 4);
    CHECK(box.num_classes() == 3);

    Tensor x = straddle_matrix(rng, 3, 4);
    Tensor p = box.query(x);
    REQUIRE(p.shape() == std::vector<std::int64_t>{3, 3});
    CHECK_FALSE(p.requires_grad());
    CHECK(p.is_leaf());
    for (int r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += p.data()[static_cast<std::size_t>(r * 3 + c)];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    NoGradGuard guard;
    Tensor want = softmax_with_temperature(forward_full_precision(reference, x), 1.0);
    CHECK(std::equal(p.data().begin(), p.data().end(), want.data().begin()));
}

TEST_CASE("reheat_softmax recovers the hidden-temperature softmax") {
    Rng rng(109);
    Tensor z = straddle_matrix(rng, 2, 5);
    NoGradGuard guard;
    Tensor p1 = softmax_with_temperature(z, 1.0);

    Tensor re = reheat_softmax(p1, 2.5);
    Tensor want = softmax_with_temperature(z, 2.5);
    for (std::size_t i = 0; i < re.data().size(); ++i)
        CHECK(re.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));

    Tensor id = reheat_softmax(p1, 1.0);
    for (std::size_t i = 0; i < id.data().size(); ++i)
        CHECK(id.data()[i] == doctest::Approx(p1.data()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(reheat_softmax(p1, 0.0), ContractError);
}
