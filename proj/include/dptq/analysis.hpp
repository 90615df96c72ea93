#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dptq/dataset.hpp"
#include "dptq/networks.hpp"

namespace dptq {

// Evaluation-time quantization source. `none` is the plain full-precision
// forward; the other three quantize weights and (per active_sites) the
// activation sites, differing only in where each example's width vector
// comes from.
enum class QuantMode { none, policy, fixed_gamma, random_budget };

struct QuantEval {
    QuantMode mode = QuantMode::none;
    const PolicyNet* policy = nullptr;  // read when mode == policy
    std::vector<int> gamma;             // read when mode == fixed_gamma, length L
    int budget = 0;                     // policy and random_budget allocations
    std::uint64_t seed = 0;             // random_budget draw stream
    QuantizeOptions qopt;
};

// Per-example width vectors under the trained policy, hard MCKP allocation,
// never on the tape.
std::vector<std::vector<int>> policy_gammas(const PolicyNet& policy, const Tensor& x,
                                            std::span<const int> options, int budget);

std::vector<int> predict(const ClassifierNet& net, const DataSplit& split, const QuantEval& eval,
                         int batch_size = 256);

// Accuracy percentage in [0, 100] over the split.
double evaluate_accuracy(const ClassifierNet& net, const DataSplit& split, const QuantEval& eval,
                         int batch_size = 256);

// Test accuracy for every network-policy pairing plus each net's unquantized
// reference column.
struct SwapMatrix {
    // Row order f_N, f_R, f_D; column order pi_R, pi_D, random.
    std::array<std::array<double, 3>, 3> accuracy{};
    std::array<double, 3> fp_accuracy{};
};

SwapMatrix policy_swap_matrix(const ClassifierNet& f_n, const ClassifierNet& f_r,
                              const ClassifierNet& f_d, const PolicyNet& pi_r,
                              const PolicyNet& pi_d, const DataSplit& split,
                              const QuantizeOptions& qopt, int budget,
                              std::uint64_t seed);

// Test points that both full-precision students classify correctly but the
// detrimental student loses once its own policy quantizes it.
struct TransitoryResult {
    std::vector<int> indices;
    double percentage = 0.0;
    // The three prediction vectors the set is derived from, kept so callers
    // can recompute the set independently.
    std::vector<int> pred_fr_fp;
    std::vector<int> pred_fd_fp;
    std::vector<int> pred_fd_q;
};

TransitoryResult transitory_points(const ClassifierNet& f_r, const ClassifierNet& f_d,
                                   const PolicyNet& pi_d, const DataSplit& split,
                                   const QuantizeOptions& qopt, int budget);

enum class SweepScheme { before, after, single };

struct LayerSweepRecord {
    int layer = 0;  // 1-based
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct LayerSweepResult {
    SweepScheme scheme = SweepScheme::before;
    std::vector<LayerSweepRecord> records;  // exactly L
};

// For each layer l: activation-quantize only the scheme's subset (sites
// strictly before l, strictly after l, or exactly l), weights quantized
// throughout, and record train/test accuracy. Width source is `eval` (policy
// by default, fixed gamma via mode); its active_sites is overridden per l.
LayerSweepResult layer_sweep(const ClassifierNet& net, const QuantEval& eval, SweepScheme scheme,
                             const SyntheticDataset& data, int batch_size = 256);

inline constexpr int kHistogramBins = 1600;  // [-8, 8] at width 0.01
inline constexpr double kHistogramLo = -8.0;
inline constexpr double kHistogramBinWidth = 0.01;

struct ActivationHistogram {
    int layer = 0;         // 1-based site index
    bool quantized = false;  // pre-quantizer (false) or post-quantizer (true) values
    double sparsity = 0.0;   // fraction of values in the zero bin, before removal
    bool degenerate = false;  // no mass outside the zero bin
    std::vector<double> normalized;  // 1600 bins, zero bin removed then renormalized
};

// Two histograms per quantizable site (pre- and post-quantizer values from
// the same policy-quantized forward). Out-of-range values clamp to the edge
// bins. max_examples > 0 caps how much of the split is pushed through.
std::vector<ActivationHistogram> activation_histograms(const ClassifierNet& net,
                                                       const PolicyNet& policy,
                                                       const DataSplit& split,
                                                       const QuantizeOptions& qopt,
                                                       int budget, int max_examples = 0);

enum class PerturbKind {
    gaussian_noise,
    feature_erasing,
    scale_jitter,
    contrast_jitter,
    normalization_shift
};

const char* perturb_kind_name(PerturbKind kind);

struct PerturbationCurve {
    PerturbKind kind = PerturbKind::gaussian_noise;
    std::vector<double> degrees;
    std::vector<std::vector<double>> accuracy;  // [model][degree], full precision
};

// Applies the transform to the test split at each degree and evaluates every
// model at full precision. Deterministic given (seed, transform, degree
// index); degree 0 must come first and is the identity.
PerturbationCurve perturbation_robustness(const std::vector<const ClassifierNet*>& models,
                                          PerturbKind kind, const std::vector<double>& degrees,
                                          const SyntheticDataset& data, std::uint64_t seed,
                                          int batch_size = 256);

}  // namespace dptq
