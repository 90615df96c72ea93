#include "dptq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dptq/errors.hpp"
#include "dptq/losses.hpp"
#include "dptq/mckp.hpp"

namespace dptq {

namespace {

std::vector<int> batch_indices(int begin, int end) {
    std::vector<int> idx(static_cast<std::size_t>(end - begin));
    for (int i = begin; i < end; ++i) idx[static_cast<std::size_t>(i - begin)] = i;
    return idx;
}

void check_eval(const QuantEval& eval, const char* who) {
    if (eval.mode == QuantMode::none) return;
    if (eval.mode == QuantMode::policy && eval.policy == nullptr)
        throw ContractError(std::string(who) + ": policy mode needs a policy");
    if (eval.mode != QuantMode::fixed_gamma && eval.qopt.options.empty())
        throw ContractError(std::string(who) + ": budgeted modes need the option list");
}

}  // namespace

std::vector<std::vector<int>> policy_gammas(const PolicyNet& policy, const Tensor& x,
                                            std::span<const int> options, int budget) {
    if (static_cast<int>(options.size()) != policy.spec.options)
        throw ContractError("policy_gammas: option count does not match the policy head");
    NoGradGuard guard;
    Tensor out = policy_forward(policy, x);
    std::vector<std::vector<int>> gammas;
    gammas.reserve(static_cast<std::size_t>(out.dim(0)));
    for (std::int64_t b = 0; b < out.dim(0); ++b) {
        Tensor logits = reshape(take_row(out, b), {policy.spec.layers, policy.spec.options});
        gammas.push_back(allocate_bitwidths(logits, options, budget).gamma);
    }
    return gammas;
}

std::vector<int> predict(const ClassifierNet& net, const DataSplit& split, const QuantEval& eval,
                         int batch_size) {
    check_eval(eval, "predict");
    if (batch_size < 1) throw ContractError("predict: batch_size must be positive");
    NoGradGuard guard;

    // One stream for the whole pass so the draws depend only on example order.
    Rng random_rng(derive_seed(eval.seed, "random-gamma"));
    const int L = net.quantizable_layers();

    std::vector<int> preds;
    preds.reserve(static_cast<std::size_t>(split.n));
    for (int begin = 0; begin < split.n; begin += batch_size) {
        const int end = std::min(split.n, begin + batch_size);
        Tensor x = split.batch(batch_indices(begin, end));
        Tensor logits;
        switch (eval.mode) {
            case QuantMode::none:
                logits = forward_full_precision(net, x);
                break;
            case QuantMode::policy: {
                auto gammas = policy_gammas(*eval.policy, x, eval.qopt.options, eval.budget);
                logits = forward_quantized(net, x, gammas, eval.qopt);
                break;
            }
            case QuantMode::fixed_gamma: {
                std::vector<std::vector<int>> gammas(static_cast<std::size_t>(end - begin),
                                                     eval.gamma);
                logits = forward_quantized(net, x, gammas, eval.qopt);
                break;
            }
            case QuantMode::random_budget: {
                std::vector<std::vector<int>> gammas;
                gammas.reserve(static_cast<std::size_t>(end - begin));
                for (int i = begin; i < end; ++i)
                    gammas.push_back(
                        sample_feasible_gamma(L, eval.qopt.options, eval.budget, random_rng));
                logits = forward_quantized(net, x, gammas, eval.qopt);
                break;
            }
        }
        for (int r : argmax_rows(logits)) preds.push_back(r);
    }
    return preds;
}

double evaluate_accuracy(const ClassifierNet& net, const DataSplit& split, const QuantEval& eval,
                         int batch_size) {
    const std::vector<int> preds = predict(net, split, eval, batch_size);
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == split.y[i]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(split.n);
}

SwapMatrix policy_swap_matrix(const ClassifierNet& f_n, const ClassifierNet& f_r,
                              const ClassifierNet& f_d, const PolicyNet& pi_r,
                              const PolicyNet& pi_d, const DataSplit& split,
                              const QuantizeOptions& qopt, int budget, std::uint64_t seed) {
    const std::array<const ClassifierNet*, 3> nets = {&f_n, &f_r, &f_d};
    SwapMatrix out;
    for (std::size_t r = 0; r < nets.size(); ++r) {
        for (int c = 0; c < 3; ++c) {
            QuantEval eval;
            eval.qopt = qopt;
            eval.budget = budget;
            if (c == 0) {
                eval.mode = QuantMode::policy;
                eval.policy = &pi_r;
            } else if (c == 1) {
                eval.mode = QuantMode::policy;
                eval.policy = &pi_d;
            } else {
                eval.mode = QuantMode::random_budget;
                eval.seed = seed;
            }
            out.accuracy[r][static_cast<std::size_t>(c)] =
                evaluate_accuracy(*nets[r], split, eval);
        }
        out.fp_accuracy[r] = evaluate_accuracy(*nets[r], split, {});
    }
    return out;
}

TransitoryResult transitory_points(const ClassifierNet& f_r, const ClassifierNet& f_d,
                                   const PolicyNet& pi_d, const DataSplit& split,
                                   const QuantizeOptions& qopt, int budget) {
    TransitoryResult out;
    out.pred_fr_fp = predict(f_r, split, {});
    out.pred_fd_fp = predict(f_d, split, {});
    QuantEval eval;
    eval.mode = QuantMode::policy;
    eval.policy = &pi_d;
    eval.qopt = qopt;
    eval.budget = budget;
    out.pred_fd_q = predict(f_d, split, eval);

    for (int i = 0; i < split.n; ++i) {
        const std::size_t u = static_cast<std::size_t>(i);
        if (out.pred_fr_fp[u] == split.y[u] && out.pred_fd_fp[u] == split.y[u] &&
            out.pred_fd_q[u] != split.y[u])
            out.indices.push_back(i);
    }
    out.percentage =
        100.0 * static_cast<double>(out.indices.size()) / static_cast<double>(split.n);
    return out;
}

LayerSweepResult layer_sweep(const ClassifierNet& net, const QuantEval& eval, SweepScheme scheme,
                             const SyntheticDataset& data, int batch_size) {
    if (eval.mode != QuantMode::policy && eval.mode != QuantMode::fixed_gamma)
        throw ContractError("layer_sweep: width source must be the policy or a fixed gamma");
    const int L = net.quantizable_layers();
    LayerSweepResult out;
    out.scheme = scheme;
    for (int l = 1; l <= L; ++l) {
        QuantEval e = eval;
        e.qopt.active_sites.assign(static_cast<std::size_t>(L), 0);
        for (int s = 1; s <= L; ++s) {
            const bool active = scheme == SweepScheme::before ? s < l
                                : scheme == SweepScheme::after ? s > l
                                                               : s == l;
            if (active) e.qopt.active_sites[static_cast<std::size_t>(s - 1)] = 1;
        }
        LayerSweepRecord rec;
        rec.layer = l;
        rec.train_accuracy = evaluate_accuracy(net, data.train, e, batch_size);
        rec.test_accuracy = evaluate_accuracy(net, data.test, e, batch_size);
        out.records.push_back(rec);
    }
    return out;
}

namespace {

int histogram_bin(double v) {
    const double raw = std::floor((v - kHistogramLo) / kHistogramBinWidth);
    if (raw < 0.0) return 0;
    if (raw >= kHistogramBins) return kHistogramBins - 1;
    return static_cast<int>(raw);
}

constexpr int kZeroBin = 800;  // [0, 0.01), the bin containing 0

ActivationHistogram finalize_histogram(int layer, bool quantized,
                                       const std::vector<std::int64_t>& counts,
                                       std::int64_t total) {
    ActivationHistogram h;
    h.layer = layer;
    h.quantized = quantized;
    h.normalized.assign(kHistogramBins, 0.0);
    if (total <= 0) {
        h.degenerate = true;
        return h;
    }
    const std::int64_t zero_mass = counts[kZeroBin];
    h.sparsity = static_cast<double>(zero_mass) / static_cast<double>(total);
    const std::int64_t rest = total - zero_mass;
    if (rest <= 0) {
        h.degenerate = true;
        return h;
    }
    for (int b = 0; b < kHistogramBins; ++b) {
        if (b == kZeroBin) continue;
        h.normalized[static_cast<std::size_t>(b)] =
            static_cast<double>(counts[static_cast<std::size_t>(b)]) / static_cast<double>(rest);
    }
    return h;
}

}  // namespace

std::vector<ActivationHistogram> activation_histograms(const ClassifierNet& net,
                                                       const PolicyNet& policy,
                                                       const DataSplit& split,
                                                       const QuantizeOptions& qopt, int budget,
                                                       int max_examples) {
    if (split.n < 1) throw ContractError("activation_histograms: empty sample");
    if (qopt.options.empty())
        throw ContractError("activation_histograms: option list required");
    NoGradGuard guard;
    const int L = net.quantizable_layers();
    const int n = max_examples > 0 ? std::min(split.n, max_examples) : split.n;

    std::vector<std::vector<std::int64_t>> pre(static_cast<std::size_t>(L)),
        post(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        pre[static_cast<std::size_t>(l)].assign(kHistogramBins, 0);
        post[static_cast<std::size_t>(l)].assign(kHistogramBins, 0);
    }
    std::vector<std::int64_t> totals(static_cast<std::size_t>(L), 0);

    const int batch = 256;
    for (int begin = 0; begin < n; begin += batch) {
        const int end = std::min(n, begin + batch);
        Tensor x = split.batch(batch_indices(begin, end));
        auto gammas = policy_gammas(policy, x, qopt.options, budget);
        QuantForwardTrace trace;
        forward_quantized(net, x, gammas, qopt, &trace);
        for (int l = 0; l < L; ++l) {
            const std::size_t u = static_cast<std::size_t>(l);
            for (double v : trace.pre_activations[u]) ++pre[u][static_cast<std::size_t>(histogram_bin(v))];
            for (double v : trace.post_activations[u]) ++post[u][static_cast<std::size_t>(histogram_bin(v))];
            totals[u] += static_cast<std::int64_t>(trace.pre_activations[u].size());
        }
    }

    std::vector<ActivationHistogram> out;
    for (int l = 0; l < L; ++l) {
        const std::size_t u = static_cast<std::size_t>(l);
        out.push_back(finalize_histogram(l + 1, false, pre[u], totals[u]));
        out.push_back(finalize_histogram(l + 1, true, post[u], totals[u]));
    }
    return out;
}

const char* perturb_kind_name(PerturbKind kind) {
    switch (kind) {
        case PerturbKind::gaussian_noise: return "gaussian_noise";
        case PerturbKind::feature_erasing: return "feature_erasing";
        case PerturbKind::scale_jitter: return "scale_jitter";
        case PerturbKind::contrast_jitter: return "contrast_jitter";
        case PerturbKind::normalization_shift: return "normalization_shift";
    }
    return "unknown";
}

namespace {

DataSplit perturb_split(const DataSplit& test, const DataSplit& train, PerturbKind kind,
                        double degree, Rng& rng) {
    DataSplit out = test;
    // Degree 0 is the exact identity for every kind; applying the formulas
    // would reintroduce rounding (contrast recenters each row).
    if (degree == 0.0) return out;
    const int d = test.d;
    switch (kind) {
        case PerturbKind::gaussian_noise:
            for (auto& v : out.x) v += degree * normal_double(rng);
            break;
        case PerturbKind::feature_erasing: {
            const int block = std::min<int>(d, static_cast<int>(std::llround(degree * d)));
            for (int i = 0; i < out.n; ++i) {
                if (block == 0) continue;
                const int start = static_cast<int>(
                    uniform_below(rng, static_cast<std::uint64_t>(d - block + 1)));
                double* row = out.x.data() + static_cast<std::size_t>(i) * d;
                std::fill(row + start, row + start + block, 0.0);
            }
            break;
        }
        case PerturbKind::scale_jitter:
            for (int i = 0; i < out.n; ++i) {
                const double f = 1.0 + degree * uniform_range(rng, -1.0, 1.0);
                double* row = out.x.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) row[j] *= f;
            }
            break;
        case PerturbKind::contrast_jitter:
            for (int i = 0; i < out.n; ++i) {
                double* row = out.x.data() + static_cast<std::size_t>(i) * d;
                double m = 0.0;
                for (int j = 0; j < d; ++j) m += row[j];
                m /= d;
                const double f = 1.0 + degree * uniform_range(rng, -1.0, 1.0);
                for (int j = 0; j < d; ++j) row[j] = m + f * (row[j] - m);
            }
            break;
        case PerturbKind::normalization_shift: {
            std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
            for (int i = 0; i < train.n; ++i)
                for (int j = 0; j < d; ++j)
                    mu[static_cast<std::size_t>(j)] +=
                        train.x[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
            for (auto& v : mu) v /= train.n;
            for (int i = 0; i < out.n; ++i) {
                double* row = out.x.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j)
                    row[j] = (row[j] - degree * mu[static_cast<std::size_t>(j)]) / (1.0 + degree);
            }
            break;
        }
    }
    return out;
}

}  // namespace

PerturbationCurve perturbation_robustness(const std::vector<const ClassifierNet*>& models,
                                          PerturbKind kind, const std::vector<double>& degrees,
                                          const SyntheticDataset& data, std::uint64_t seed,
                                          int batch_size) {
    if (models.empty()) throw ContractError("perturbation_robustness: no models");
    if (degrees.empty() || degrees.front() != 0.0)
        throw ContractError("perturbation_robustness: degrees must start at 0");
    for (std::size_t i = 1; i < degrees.size(); ++i)
        if (!(degrees[i] > degrees[i - 1]))
            throw ContractError("perturbation_robustness: degrees must increase");

    PerturbationCurve out;
    out.kind = kind;
    out.degrees = degrees;
    out.accuracy.assign(models.size(), std::vector<double>(degrees.size(), 0.0));

    const std::uint64_t kind_seed = derive_seed(seed, perturb_kind_name(kind));
    for (std::size_t di = 0; di < degrees.size(); ++di) {
        Rng rng(derive_seed(kind_seed, "degree-" + std::to_string(di)));
        const DataSplit perturbed =
            perturb_split(data.test, data.train, kind, degrees[di], rng);
        for (std::size_t m = 0; m < models.size(); ++m)
            out.accuracy[m][di] = evaluate_accuracy(*models[m], perturbed, {}, batch_size);
    }
    return out;
}

}  // namespace dptq
