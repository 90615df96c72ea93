#pragma once

#include <cstdint>
#include <vector>

#include "dptq/mckp.hpp"
#include "dptq/ops.hpp"
#include "dptq/quantize.hpp"
#include "dptq/rng.hpp"

namespace dptq {

// MLP classifier family. Quantizable sites are the post-ReLU outputs of each
// hidden layer; the final logits are never activation-quantized. Weights of
// every affine layer are symmetrically fake-quantized at weight_bits on each
// quantized forward (QAT semantics, scales re-derived every pass); biases are
// left untouched.

struct NetSpec {
    int input_dim = 32;
    int num_classes = 10;
    std::vector<int> hidden = {64, 64, 64, 64, 64, 64, 64, 64};
};

struct ClassifierNet {
    NetSpec spec;
    std::vector<Tensor> weights;  // [in x out] per affine layer
    std::vector<Tensor> biases;   // [out]

    int quantizable_layers() const { return static_cast<int>(spec.hidden.size()); }
    std::vector<Tensor> parameters() const;
    void set_trainable(bool trainable);
    ClassifierNet clone() const;  // deep copy, bitwise-identical forward
};

ClassifierNet init_classifier(const NetSpec& spec, Rng& rng);

Tensor forward_full_precision(const ClassifierNet& net, const Tensor& x);

struct QuantizeOptions {
    int weight_bits = 16;
    std::vector<int> options;      // permitted activation widths; empty skips the check
    ScaleRule activation_rule;     // asymmetric grids use min/max under the default kind
    // Per-site switch for the layer sweeps: empty quantizes every site,
    // otherwise length L with nonzero entries marking quantized sites.
    // Weights stay quantized regardless.
    std::vector<std::uint8_t> active_sites;
};

struct QuantForwardTrace {
    std::int64_t batch = 0;
    std::vector<std::int64_t> site_width;               // units per site
    std::vector<std::vector<double>> pre_activations;   // [L][B*N_l], before the quantizer
    std::vector<std::vector<double>> post_activations;  // [L][B*N_l], after
    std::vector<std::vector<QuantSpec>> specs;          // [L][B]
    std::vector<std::vector<int>> gamma;                // [B][L] as applied
};

// Evaluation path: activation widths fixed per example by gamma [B][L].
Tensor forward_quantized(const ClassifierNet& net, const Tensor& x,
                         const std::vector<std::vector<int>>& gamma,
                         const QuantizeOptions& qopt, QuantForwardTrace* trace = nullptr);

// Training path: each example's widths come from an MCKP Allocation whose
// differentiable_selection feeds the candidate-selection sites, so hinge
// gradients reach the policy head.
Tensor forward_quantized_coupled(const ClassifierNet& net, const Tensor& x,
                                 const std::vector<Allocation>& allocs,
                                 const QuantizeOptions& qopt);

// Bit-width policy head: an MLP emitting one [L x O] logit matrix per
// example.
struct PolicySpec {
    int input_dim = 32;
    int layers = 8;   // L
    int options = 8;  // O
    std::vector<int> hidden = {32, 32};
};

struct PolicyNet {
    PolicySpec spec;
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    std::vector<Tensor> parameters() const;
    void set_trainable(bool trainable);
    PolicyNet clone() const;
};

PolicyNet init_policy(const PolicySpec& spec, Rng& rng);

Tensor policy_forward(const PolicyNet& policy, const Tensor& x);  // [B x L*O]

// Query-only wrapper around a frozen classifier: softmax at temperature 1,
// never on the tape, no parameter access.
class BlackBoxHandle {
  public:
    explicit BlackBoxHandle(ClassifierNet net);

    Tensor query(const Tensor& x) const;  // [B x K]
    int input_dim() const { return net_.spec.input_dim; }
    int num_classes() const { return net_.spec.num_classes; }

  private:
    ClassifierNet net_;
};

// Sharpness adjustment for distributions from a query-only model: softmax of
// log-probabilities divided by tau, equal to re-softmaxing the hidden logits
// at temperature tau up to their lost additive constant.
Tensor reheat_softmax(const Tensor& p, double tau);

}  // namespace dptq
