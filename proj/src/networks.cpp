#include "dptq/networks.hpp"

#include <algorithm>
#include <cmath>

namespace dptq {

namespace {

Tensor he_weight(int fan_in, int fan_out, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = std_dev * normal_double(rng);
    return Tensor::from_data({fan_in, fan_out}, std::move(w), true);
}

void check_input(const Tensor& x, int dim, const char* who) {
    if (x.ndim() != 2) throw DimensionError(std::string(who) + ": input must be [B x d]");
    if (x.dim(1) != dim)
        throw DimensionError(std::string(who) + ": input dim does not match the network");
}

std::vector<int> site_bits_for(const std::vector<std::vector<int>>& gamma, int site) {
    std::vector<int> bits(gamma.size());
    for (std::size_t b = 0; b < gamma.size(); ++b) bits[b] = gamma[b][static_cast<std::size_t>(site)];
    return bits;
}

}  // namespace

std::vector<Tensor> ClassifierNet::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(weights[i]);
        out.push_back(biases[i]);
    }
    return out;
}

void ClassifierNet::set_trainable(bool trainable) {
    for (auto& w : weights) w.set_requires_grad(trainable);
    for (auto& b : biases) b.set_requires_grad(trainable);
}

ClassifierNet ClassifierNet::clone() const {
    ClassifierNet out;
    out.spec = spec;
    for (const auto& w : weights)
        out.weights.push_back(Tensor::from_data(w.shape(), {w.data().begin(), w.data().end()},
                                                w.requires_grad()));
    for (const auto& b : biases)
        out.biases.push_back(Tensor::from_data(b.shape(), {b.data().begin(), b.data().end()},
                                               b.requires_grad()));
    return out;
}

ClassifierNet init_classifier(const NetSpec& spec, Rng& rng) {
    if (spec.input_dim < 1 || spec.num_classes < 2 || spec.hidden.empty())
        throw ConfigError("init_classifier: bad network spec");
    ClassifierNet net;
    net.spec = spec;
    int in = spec.input_dim;
    for (int h : spec.hidden) {
        net.weights.push_back(he_weight(in, h, rng));
        net.biases.push_back(Tensor::zeros({h}, true));
        in = h;
    }
    net.weights.push_back(he_weight(in, spec.num_classes, rng));
    net.biases.push_back(Tensor::zeros({spec.num_classes}, true));
    return net;
}

Tensor forward_full_precision(const ClassifierNet& net, const Tensor& x) {
    check_input(x, net.spec.input_dim, "forward_full_precision");
    Tensor h = x;
    const std::size_t n_hidden = net.spec.hidden.size();
    for (std::size_t i = 0; i < n_hidden; ++i)
        h = relu(affine(h, net.weights[i], net.biases[i]));
    return affine(h, net.weights[n_hidden], net.biases[n_hidden]);
}

namespace {

void check_quant_args(const ClassifierNet& net, const Tensor& x, std::size_t n_examples,
                      const QuantizeOptions& qopt) {
    check_input(x, net.spec.input_dim, "forward_quantized");
    const std::size_t L = static_cast<std::size_t>(net.quantizable_layers());
    if (n_examples != static_cast<std::size_t>(x.dim(0)))
        throw ContractError("forward_quantized: one width vector per example required");
    if (!qopt.active_sites.empty() && qopt.active_sites.size() != L)
        throw ContractError("forward_quantized: active_sites mask must have length L");
    if (qopt.weight_bits < kMinBitWidth || qopt.weight_bits > kMaxBitWidth)
        throw ContractError("forward_quantized: weight_bits outside supported range");
}

bool site_active(const QuantizeOptions& qopt, std::size_t site) {
    return qopt.active_sites.empty() || qopt.active_sites[site] != 0;
}

void check_widths_allowed(const std::vector<int>& gamma, std::size_t L,
                          const QuantizeOptions& qopt) {
    if (gamma.size() != L) throw ContractError("forward_quantized: gamma length must equal L");
    for (int g : gamma) {
        if (g < kMinBitWidth || g > kMaxBitWidth)
            throw ContractError("forward_quantized: width outside supported range");
        if (!qopt.options.empty() &&
            std::find(qopt.options.begin(), qopt.options.end(), g) == qopt.options.end())
            throw ContractError("forward_quantized: width is not a configured option");
    }
}

}  // namespace

Tensor forward_quantized(const ClassifierNet& net, const Tensor& x,
                         const std::vector<std::vector<int>>& gamma,
                         const QuantizeOptions& qopt, QuantForwardTrace* trace) {
    check_quant_args(net, x, gamma.size(), qopt);
    const std::size_t L = static_cast<std::size_t>(net.quantizable_layers());
    for (const auto& g : gamma) check_widths_allowed(g, L, qopt);

    if (trace) {
        *trace = {};
        trace->batch = x.dim(0);
        trace->gamma = gamma;
        trace->site_width.resize(L);
        trace->pre_activations.resize(L);
        trace->post_activations.resize(L);
        trace->specs.resize(L);
    }

    Tensor h = x;
    for (std::size_t i = 0; i < L; ++i) {
        Tensor wq = fake_quantize(net.weights[i], QuantScheme::symmetric, qopt.weight_bits);
        h = relu(affine(h, wq, net.biases[i]));
        if (trace) {
            trace->site_width[i] = h.dim(1);
            trace->pre_activations[i].assign(h.data().begin(), h.data().end());
        }
        if (site_active(qopt, i)) {
            std::vector<QuantSpec> specs;
            h = fake_quantize_rows(h, QuantScheme::asymmetric, site_bits_for(gamma, static_cast<int>(i)),
                                   qopt.activation_rule, trace ? &specs : nullptr);
            if (trace) trace->specs[i] = std::move(specs);
        }
        if (trace) trace->post_activations[i].assign(h.data().begin(), h.data().end());
    }
    Tensor wq = fake_quantize(net.weights[L], QuantScheme::symmetric, qopt.weight_bits);
    return affine(h, wq, net.biases[L]);
}

Tensor forward_quantized_coupled(const ClassifierNet& net, const Tensor& x,
                                 const std::vector<Allocation>& allocs,
                                 const QuantizeOptions& qopt) {
    check_quant_args(net, x, allocs.size(), qopt);
    const std::size_t L = static_cast<std::size_t>(net.quantizable_layers());
    if (qopt.options.empty())
        throw ContractError("forward_quantized_coupled: option list required");
    for (const auto& a : allocs) {
        check_widths_allowed(a.gamma, L, qopt);
        if (a.differentiable_selection.ndim() != 2 ||
            a.differentiable_selection.dim(0) != static_cast<std::int64_t>(L) ||
            a.differentiable_selection.dim(1) != static_cast<std::int64_t>(qopt.options.size()))
            throw ContractError("forward_quantized_coupled: selection shape must be [L x O]");
    }

    Tensor h = x;
    for (std::size_t i = 0; i < L; ++i) {
        Tensor wq = fake_quantize(net.weights[i], QuantScheme::symmetric, qopt.weight_bits);
        h = relu(affine(h, wq, net.biases[i]));
        if (site_active(qopt, i)) {
            std::vector<Tensor> rows;
            rows.reserve(allocs.size());
            for (const auto& a : allocs)
                rows.push_back(take_row(a.differentiable_selection, static_cast<std::int64_t>(i)));
            h = select_candidate_rows(h, rows, qopt.options, QuantScheme::asymmetric,
                                      qopt.activation_rule);
        }
    }
    Tensor wq = fake_quantize(net.weights[L], QuantScheme::symmetric, qopt.weight_bits);
    return affine(h, wq, net.biases[L]);
}

std::vector<Tensor> PolicyNet::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(weights[i]);
        out.push_back(biases[i]);
    }
    return out;
}

void PolicyNet::set_trainable(bool trainable) {
    for (auto& w : weights) w.set_requires_grad(trainable);
    for (auto& b : biases) b.set_requires_grad(trainable);
}

PolicyNet PolicyNet::clone() const {
    PolicyNet out;
    out.spec = spec;
    for (const auto& w : weights)
        out.weights.push_back(Tensor::from_data(w.shape(), {w.data().begin(), w.data().end()},
                                                w.requires_grad()));
    for (const auto& b : biases)
        out.biases.push_back(Tensor::from_data(b.shape(), {b.data().begin(), b.data().end()},
                                               b.requires_grad()));
    return out;
}

PolicyNet init_policy(const PolicySpec& spec, Rng& rng) {
    if (spec.input_dim < 1 || spec.layers < 1 || spec.options < 2)
        throw ConfigError("init_policy: bad policy spec");
    PolicyNet net;
    net.spec = spec;
    int in = spec.input_dim;
    for (int h : spec.hidden) {
        net.weights.push_back(he_weight(in, h, rng));
        net.biases.push_back(Tensor::zeros({h}, true));
        in = h;
    }
    const int out_dim = spec.layers * spec.options;
    net.weights.push_back(he_weight(in, out_dim, rng));
    net.biases.push_back(Tensor::zeros({out_dim}, true));
    return net;
}

Tensor policy_forward(const PolicyNet& policy, const Tensor& x) {
    check_input(x, policy.spec.input_dim, "policy_forward");
    Tensor h = x;
    const std::size_t n_hidden = policy.spec.hidden.size();
    for (std::size_t i = 0; i < n_hidden; ++i)
        h = relu(affine(h, policy.weights[i], policy.biases[i]));
    return affine(h, policy.weights[n_hidden], policy.biases[n_hidden]);
}

BlackBoxHandle::BlackBoxHandle(ClassifierNet net) : net_(std::move(net)) {
    net_.set_trainable(false);
}

Tensor BlackBoxHandle::query(const Tensor& x) const {
    NoGradGuard guard;
    return softmax_with_temperature(forward_full_precision(net_, x), 1.0).detach();
}

Tensor reheat_softmax(const Tensor& p, double tau) {
    if (!(tau > 0.0)) throw ContractError("reheat_softmax: tau must be positive");
    NoGradGuard guard;
    Tensor logp = log(max_with_scalar(p, 1e-300));
    return softmax_with_temperature(logp, tau).detach();
}

}  // namespace dptq
